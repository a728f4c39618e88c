//! Distributed training topology: one acting agent per cell, centralized
//! offline training on pooled experience, and parameter broadcast.
//!
//! Acting agents hold immutable policy snapshots and stage their transitions
//! locally. Every `sync_period` steps the trainer pools all staged
//! transitions into the central learner (tagged by agent id), runs
//! `central_updates_per_round` gradient steps, and broadcasts the refreshed
//! parameters to every agent. Acting parameters are frozen between
//! broadcasts. Acting never reads another agent's observation.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ActCtx, Algorithm, PolicySnapshot, UpdateStats};
use crate::env::{decode_action, EnvObservation, RrmEnv, StepResult};
use crate::error::Result;
use crate::replay::{PooledTransition, Transition};
use crate::rng::{derive_seed_indexed, substream_indexed};

/// Cadence of the centralized training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Environment steps between central training rounds.
    pub sync_period: u64,
    /// Gradient steps per central round.
    pub central_updates_per_round: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            sync_period: 100,
            central_updates_per_round: 100,
        }
    }
}

impl SyncConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sync_period == 0 {
            errs.push("sync.sync_period: must be >= 1".to_string());
        }
        if self.central_updates_per_round == 0 {
            errs.push("sync.central_updates_per_round: must be >= 1".to_string());
        }
        errs
    }
}

/// Reward history window used by the Thompson explorer's acting-time
/// success signal.
const REWARD_WINDOW: usize = 100;

/// One acting agent at the near-real-time tier.
pub struct RegisteredAgent {
    pub id: usize,
    pub snapshot: PolicySnapshot,
    /// Snapshot version currently in force.
    pub version: u64,
    staging: Vec<PooledTransition>,
    reward_window: VecDeque<f64>,
    rng: ChaCha8Rng,
}

impl RegisteredAgent {
    fn new(id: usize, snapshot: PolicySnapshot, seed: u64) -> Self {
        Self {
            id,
            snapshot,
            version: 0,
            staging: Vec::new(),
            reward_window: VecDeque::with_capacity(REWARD_WINDOW),
            rng: substream_indexed(seed, "act", id as u64),
        }
    }

    /// Push a reward and report whether it beat the trailing median.
    fn note_reward(&mut self, reward: f64) -> bool {
        self.reward_window.push_back(reward);
        if self.reward_window.len() > REWARD_WINDOW {
            self.reward_window.pop_front();
        }
        reward > trailing_median(&self.reward_window)
    }

    pub fn staged(&self) -> usize {
        self.staging.len()
    }
}

fn trailing_median(window: &VecDeque<f64>) -> f64 {
    debug_assert!(!window.is_empty());
    let mut sorted: Vec<f64> = window.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rewards"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// All acting agents plus the shared snapshot version counter.
pub struct AgentRegistry {
    pub agents: Vec<RegisteredAgent>,
    /// Version of the last broadcast global snapshot.
    pub version: u64,
}

/// Federation events, surfaced to the metrics stream for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FedEvent {
    Pooled {
        step: u64,
        count: usize,
    },
    RoundCompleted {
        step: u64,
        updates: u64,
        mean_critic_loss: f64,
        mean_actor_loss: Option<f64>,
    },
    RoundSkipped {
        step: u64,
        reason: String,
    },
    Broadcast {
        step: u64,
        version: u64,
    },
}

/// Aggregate result of one central training round.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundOutcome {
    pub updates_run: u64,
    pub critic_loss_sum: f64,
    pub actor_loss_sum: f64,
    pub actor_loss_count: u64,
}

impl RoundOutcome {
    pub fn mean_critic_loss(&self) -> f64 {
        if self.updates_run == 0 {
            0.0
        } else {
            self.critic_loss_sum / self.updates_run as f64
        }
    }

    pub fn mean_actor_loss(&self) -> Option<f64> {
        if self.actor_loss_count == 0 {
            None
        } else {
            Some(self.actor_loss_sum / self.actor_loss_count as f64)
        }
    }

    fn note(&mut self, stats: &UpdateStats) {
        self.updates_run += 1;
        self.critic_loss_sum += stats.critic_loss;
        if let Some(al) = stats.actor_loss {
            self.actor_loss_sum += al;
            self.actor_loss_count += 1;
        }
    }
}

/// Centralized trainer wiring one learner to a registry of acting agents.
pub struct FederatedTrainer {
    pub learner: Box<dyn Algorithm>,
    pub registry: AgentRegistry,
    pub sync: SyncConfig,
    /// Completed central rounds (the learner-side version).
    trained_version: u64,
    total_pooled: u64,
}

impl FederatedTrainer {
    pub fn new(learner: Box<dyn Algorithm>, cells: usize, sync: SyncConfig, seed: u64) -> Self {
        let snapshot = learner.snapshot();
        let agents = (0..cells)
            .map(|id| RegisteredAgent::new(id, snapshot.clone(), seed))
            .collect();
        Self {
            learner,
            registry: AgentRegistry { agents, version: 0 },
            sync,
            trained_version: 0,
            total_pooled: 0,
        }
    }

    pub fn total_pooled(&self) -> u64 {
        self.total_pooled
    }

    /// Move every agent's staged transitions into the central learner, in
    /// agent order. Staging is drained, so nothing is pooled twice.
    pub fn pool_experience(&mut self) -> usize {
        let mut count = 0;
        for agent in &mut self.registry.agents {
            for tr in agent.staging.drain(..) {
                self.learner.absorb(tr);
                count += 1;
            }
        }
        self.total_pooled += count as u64;
        count
    }

    /// Run up to `central_updates_per_round` gradient steps. Returns `None`
    /// when the learner had too little data to run even one (skipped round).
    pub fn central_train_round(&mut self) -> Option<RoundOutcome> {
        let mut outcome = RoundOutcome::default();
        for _ in 0..self.sync.central_updates_per_round {
            match self.learner.update() {
                Some(stats) => outcome.note(&stats),
                None => break,
            }
        }
        if outcome.updates_run == 0 {
            return None;
        }
        self.trained_version += 1;
        Some(outcome)
    }

    /// Replace every agent's acting parameters with the current global
    /// snapshot. A no-op unless training advanced since the last broadcast.
    pub fn broadcast_params(&mut self) -> bool {
        if self.registry.version >= self.trained_version {
            return false;
        }
        let snapshot = self.learner.snapshot();
        self.registry.version = self.trained_version;
        for agent in &mut self.registry.agents {
            agent.snapshot = snapshot.clone();
            agent.version = self.trained_version;
        }
        true
    }

    /// Act for every cell on its local observation only.
    fn act_all(
        &mut self,
        obs: &[EnvObservation],
        step: u64,
        explore: bool,
    ) -> Vec<(crate::replay::RawAction, crate::replay::ActMeta)> {
        let ctx = ActCtx {
            env_step: step,
            explore,
        };
        self.registry
            .agents
            .iter_mut()
            .zip(obs)
            .map(|(agent, o)| agent.snapshot.act(&o.to_vec(), ctx, &mut agent.rng))
            .collect()
    }

    /// Drive `steps` environment steps of federated training.
    ///
    /// `on_slot(step, result)` fires after every environment step and
    /// `on_event` after every pool/round/broadcast.
    pub fn train(
        &mut self,
        env: &mut RrmEnv,
        steps: u64,
        seed: u64,
        mut on_slot: impl FnMut(u64, &StepResult),
        mut on_event: impl FnMut(FedEvent) -> Result<()>,
    ) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let mut episode = 0u64;
        let mut obs = env.reset(derive_seed_indexed(seed, "train-episode", episode))?;
        for step in 0..steps {
            if env.is_done() {
                episode += 1;
                obs = env.reset(derive_seed_indexed(seed, "train-episode", episode))?;
            }
            let acts = self.act_all(&obs, step, true);
            let decoded = acts
                .iter()
                .map(|(raw, _)| decode_action(raw))
                .collect::<Result<Vec<_>>>()?;
            let result = env.step(&decoded)?;
            for (agent, (raw, mut meta)) in self.registry.agents.iter_mut().zip(acts) {
                let reward = result.rewards[agent.id];
                let success = agent.note_reward(reward);
                if meta.ts_head.is_some() {
                    meta.ts_success = Some(success);
                }
                agent.staging.push(PooledTransition {
                    agent_id: agent.id,
                    transition: Transition {
                        obs: obs[agent.id].to_vec(),
                        action: raw,
                        reward,
                        next_obs: result.next_obs[agent.id].to_vec(),
                        done: result.done,
                    },
                    meta,
                });
            }
            obs = result.next_obs.clone();
            on_slot(step, &result);

            if (step + 1) % self.sync.sync_period == 0 {
                let pooled = self.pool_experience();
                on_event(FedEvent::Pooled {
                    step: step + 1,
                    count: pooled,
                })?;
                match self.central_train_round() {
                    Some(outcome) => {
                        on_event(FedEvent::RoundCompleted {
                            step: step + 1,
                            updates: outcome.updates_run,
                            mean_critic_loss: outcome.mean_critic_loss(),
                            mean_actor_loss: outcome.mean_actor_loss(),
                        })?;
                    }
                    None => on_event(FedEvent::RoundSkipped {
                        step: step + 1,
                        reason: "insufficient pooled experience".to_string(),
                    })?,
                }
                if self.broadcast_params() {
                    on_event(FedEvent::Broadcast {
                        step: step + 1,
                        version: self.registry.version,
                    })?;
                }
            }
        }
        Ok(())
    }
}

/// The plain single-agent training loop: act, absorb, update once, refresh
/// the acting snapshot — every step. The federation with one agent and
/// `sync_period = central_updates_per_round = 1` reproduces this loop
/// bit-exactly.
pub fn train_single_agent(
    learner: &mut dyn Algorithm,
    env: &mut RrmEnv,
    steps: u64,
    seed: u64,
    mut on_slot: impl FnMut(u64, &StepResult),
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    let mut agent = RegisteredAgent::new(0, learner.snapshot(), seed);
    let mut episode = 0u64;
    let mut obs = env.reset(derive_seed_indexed(seed, "train-episode", episode))?;
    for step in 0..steps {
        if env.is_done() {
            episode += 1;
            obs = env.reset(derive_seed_indexed(seed, "train-episode", episode))?;
        }
        let ctx = ActCtx {
            env_step: step,
            explore: true,
        };
        let (raw, mut meta) = agent.snapshot.act(&obs[0].to_vec(), ctx, &mut agent.rng);
        let decoded = vec![decode_action(&raw)?];
        let result = env.step(&decoded)?;
        let reward = result.rewards[0];
        let success = agent.note_reward(reward);
        if meta.ts_head.is_some() {
            meta.ts_success = Some(success);
        }
        learner.absorb(PooledTransition {
            agent_id: 0,
            transition: Transition {
                obs: obs[0].to_vec(),
                action: raw,
                reward,
                next_obs: result.next_obs[0].to_vec(),
                done: result.done,
            },
            meta,
        });
        learner.update();
        agent.snapshot = learner.snapshot();
        obs = result.next_obs.clone();
        on_slot(step, &result);
    }
    Ok(())
}

/// Exploration-free evaluation of the learner's current policy.
pub fn evaluate_policy(
    learner: &dyn Algorithm,
    env: &mut RrmEnv,
    episodes: u64,
    seed: u64,
    mut on_slot: impl FnMut(u64, u64, &StepResult),
) -> Result<()> {
    let snapshot = learner.snapshot();
    let cells = env.cfg.cells;
    let mut rng = substream_indexed(seed, "eval-act", 0);
    for episode in 0..episodes {
        let mut obs = env.reset(derive_seed_indexed(seed, "eval-episode", episode))?;
        loop {
            let ctx = ActCtx {
                env_step: 0,
                explore: false,
            };
            let decoded = (0..cells)
                .map(|c| {
                    let (raw, _) = snapshot.act(&obs[c].to_vec(), ctx, &mut rng);
                    decode_action(&raw)
                })
                .collect::<Result<Vec<_>>>()?;
            let result = env.step(&decoded)?;
            obs = result.next_obs.clone();
            let done = result.done;
            on_slot(episode, result.slot, &result);
            if done {
                break;
            }
        }
    }
    Ok(())
}
