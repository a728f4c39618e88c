//! The learning suite: shared machinery plus DQN, DDQN, DDPG, PGAC, TD3 and
//! the Thompson-sampling-guided TD3 variant.
//!
//! A learner implements [`Algorithm`]: it absorbs pooled transitions, runs
//! gradient updates, and exports an immutable [`PolicySnapshot`] that acting
//! agents use. All acting randomness comes from the caller's stream; all
//! learning randomness from the learner's own stream. That split is what
//! makes the federation and feature-flag equivalences bit-exact.

mod checkpoint;
mod ddpg;
mod pgac;
mod qlearn;
mod td3;

pub use checkpoint::{read_checkpoint, TensorData};
pub use ddpg::DdpgAgent;
pub use pgac::PgacAgent;
pub use qlearn::{ddqn_target, dqn_target, QAgent};
pub use td3::{smooth_target_action, td3_target, Td3Agent};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{DISCRETE_ACTIONS, OBS_DIM};
use crate::error::{Result, SimError};
use crate::nn::Mlp;
use crate::replay::{ActMeta, PooledTransition, RawAction, ReplayBuffer};
use crate::thompson::BetaPosterior;

/// Continuous action dimensionality (URLLC share, power share).
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dqn,
    Ddqn,
    Ddpg,
    Pgac,
    Td3,
    #[serde(rename = "td3-ts")]
    Td3Ts,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Dqn,
        AgentKind::Ddqn,
        AgentKind::Ddpg,
        AgentKind::Pgac,
        AgentKind::Td3,
        AgentKind::Td3Ts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Pgac => "pgac",
            AgentKind::Td3 => "td3",
            AgentKind::Td3Ts => "td3-ts",
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, AgentKind::Dqn | AgentKind::Ddqn)
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(AgentKind::Dqn),
            "ddqn" => Ok(AgentKind::Ddqn),
            "ddpg" => Ok(AgentKind::Ddpg),
            "pgac" => Ok(AgentKind::Pgac),
            "td3" => Ok(AgentKind::Td3),
            "td3-ts" | "td3ts" => Ok(AgentKind::Td3Ts),
            other => Err(SimError::domain(format!(
                "unknown agent '{other}' (expected dqn|ddqn|ddpg|pgac|td3|td3-ts)"
            ))),
        }
    }
}

/// Thompson-explorer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsHyper {
    pub enabled: bool,
    /// Critic ensemble size (>= 2; the first two heads are the TD3 twins).
    pub heads: usize,
    /// Perturbed candidate actions scored per acting step.
    pub candidates: usize,
}

impl Default for TsHyper {
    fn default() -> Self {
        Self {
            enabled: false,
            heads: 4,
            candidates: 8,
        }
    }
}

/// Hyper-parameters shared by the whole suite. Agent-kind defaults come from
/// [`AgentHyper::defaults_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentHyper {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Epsilon-greedy schedule (discrete agents): linear anneal from
    /// `eps_initial` to `eps_final` over `eps_anneal_frac` of training.
    pub eps_initial: f64,
    pub eps_final: f64,
    pub eps_anneal_frac: f64,
    /// Gaussian exploration noise on continuous actions.
    pub action_noise_sigma: f64,
    /// TD3 target-policy smoothing.
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    /// TD3 delayed policy updates: actor/targets move every `policy_delay`
    /// critic updates.
    pub policy_delay: u64,
    /// PGAC on-policy rollout segment length.
    pub rollout_len: usize,
    /// Initial standard deviation of the PGAC Gaussian policy.
    pub pgac_init_std: f64,
    pub ts: TsHyper,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.95,
            tau: 0.005,
            batch_size: 64,
            replay_capacity: 50_000,
            hidden: vec![64, 64],
            eps_initial: 1.0,
            eps_final: 0.05,
            eps_anneal_frac: 0.3,
            action_noise_sigma: 0.1,
            target_noise_sigma: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            rollout_len: 20,
            pgac_init_std: 0.3,
            ts: TsHyper::default(),
        }
    }
}

impl AgentHyper {
    /// Per-algorithm learning rates and the TS flag.
    pub fn defaults_for(kind: AgentKind) -> Self {
        let mut h = Self::default();
        match kind {
            AgentKind::Dqn | AgentKind::Ddqn => {
                h.critic_lr = 1e-3;
            }
            AgentKind::Ddpg => {
                h.actor_lr = 1e-4;
                h.critic_lr = 1e-3;
            }
            AgentKind::Pgac => {
                h.actor_lr = 1e-5;
                h.critic_lr = 1e-3;
            }
            AgentKind::Td3 => {
                h.actor_lr = 1e-5;
                h.critic_lr = 1e-3;
            }
            AgentKind::Td3Ts => {
                h.actor_lr = 1e-5;
                h.critic_lr = 1e-3;
                h.ts.enabled = true;
            }
        }
        h
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            errs.push("hyper: learning rates must be positive".to_string());
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            errs.push(format!("hyper.gamma: must be in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push(format!("hyper.tau: must be in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 {
            errs.push("hyper.batch_size: must be positive".to_string());
        }
        if self.replay_capacity == 0 {
            errs.push("hyper.replay_capacity: must be positive".to_string());
        }
        if self.hidden.is_empty() {
            errs.push("hyper.hidden: at least one hidden layer".to_string());
        }
        if !(0.0..=1.0).contains(&self.eps_initial) || !(0.0..=1.0).contains(&self.eps_final) {
            errs.push("hyper: epsilon bounds must lie in [0, 1]".to_string());
        }
        if self.policy_delay == 0 {
            errs.push("hyper.policy_delay: must be >= 1".to_string());
        }
        if self.rollout_len == 0 {
            errs.push("hyper.rollout_len: must be >= 1".to_string());
        }
        if self.ts.heads < 2 {
            errs.push("hyper.ts.heads: need at least 2 critic heads".to_string());
        }
        errs
    }
}

/// Linear epsilon anneal over absolute step counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub anneal_steps: u64,
}

impl EpsSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.final_value;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.initial + (self.final_value - self.initial) * frac
    }
}

/// Argmax with the lowest index winning ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Epsilon-greedy selection over Q-values.
pub fn epsilon_greedy_select(q: &[f64], eps: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if q.is_empty() {
        return Err(SimError::domain("epsilon-greedy over an empty action set"));
    }
    debug_assert!((0.0..=1.0).contains(&eps));
    if eps > 0.0 && rng.random::<f64>() < eps {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(q))
    }
}

/// Acting context handed to a policy snapshot.
#[derive(Debug, Clone, Copy)]
pub struct ActCtx {
    /// Global environment step (drives exploration schedules).
    pub env_step: u64,
    /// False during evaluation: deterministic, exploration-free acting.
    pub explore: bool,
}

/// Immutable policy state used for acting; broadcast by the federation.
#[derive(Debug, Clone)]
pub enum PolicySnapshot {
    EpsGreedyQ {
        q: Mlp,
        eps: EpsSchedule,
    },
    Deterministic {
        actor: Mlp,
        noise_sigma: f64,
    },
    Gaussian {
        actor: Mlp,
        log_std: Array1<f64>,
    },
    TsGuided {
        actor: Mlp,
        heads: Vec<Mlp>,
        posterior: BetaPosterior,
        noise_sigma: f64,
        candidates: usize,
    },
}

impl PolicySnapshot {
    /// Choose a raw action for `obs`.
    pub fn act(&self, obs: &[f64], ctx: ActCtx, rng: &mut ChaCha8Rng) -> (RawAction, ActMeta) {
        match self {
            PolicySnapshot::EpsGreedyQ { q, eps } => {
                let values = q.forward1(obs);
                let eps_now = if ctx.explore { eps.value(ctx.env_step) } else { 0.0 };
                let idx = epsilon_greedy_select(&values, eps_now, rng).expect("nonempty actions");
                (RawAction::Discrete(idx), ActMeta::default())
            }
            PolicySnapshot::Deterministic { actor, noise_sigma } => {
                let mut a = actor.forward1(obs);
                if ctx.explore && *noise_sigma > 0.0 {
                    for v in &mut a {
                        let n: f64 = StandardNormal.sample(rng);
                        *v = (*v + noise_sigma * n).clamp(-1.0, 1.0);
                    }
                }
                (RawAction::Continuous(a), ActMeta::default())
            }
            PolicySnapshot::Gaussian { actor, log_std } => {
                let mean = actor.forward1(obs);
                if !ctx.explore {
                    return (RawAction::Continuous(mean), ActMeta::default());
                }
                let mut a = Vec::with_capacity(mean.len());
                let mut log_prob = 0.0;
                for (i, &m) in mean.iter().enumerate() {
                    let sigma = log_std[i].exp();
                    let n: f64 = StandardNormal.sample(rng);
                    let x = m + sigma * n;
                    let z = (x - m) / sigma;
                    log_prob += -0.5 * z * z - log_std[i] - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    a.push(x);
                }
                (
                    RawAction::Continuous(a),
                    ActMeta {
                        log_prob: Some(log_prob),
                        ..ActMeta::default()
                    },
                )
            }
            PolicySnapshot::TsGuided {
                actor,
                heads,
                posterior,
                noise_sigma,
                candidates,
            } => {
                let mean = actor.forward1(obs);
                if !ctx.explore {
                    return (RawAction::Continuous(mean), ActMeta::default());
                }
                // Sample which critic head judges this step's candidates.
                let head = posterior.ts_select(rng).expect("at least one head");
                let mut pool = Vec::with_capacity(candidates + 1);
                pool.push(mean.clone());
                for _ in 0..*candidates {
                    let cand: Vec<f64> = mean
                        .iter()
                        .map(|&m| {
                            let n: f64 = StandardNormal.sample(rng);
                            (m + noise_sigma * n).clamp(-1.0, 1.0)
                        })
                        .collect();
                    pool.push(cand);
                }
                let mut input = Vec::with_capacity(obs.len() + mean.len());
                let mut best = 0;
                let mut best_q = f64::NEG_INFINITY;
                for (i, cand) in pool.iter().enumerate() {
                    input.clear();
                    input.extend_from_slice(obs);
                    input.extend_from_slice(cand);
                    let q = heads[head].forward1(&input)[0];
                    if q > best_q {
                        best_q = q;
                        best = i;
                    }
                }
                (
                    RawAction::Continuous(pool.swap_remove(best)),
                    ActMeta {
                        ts_head: Some(head),
                        ..ActMeta::default()
                    },
                )
            }
        }
    }
}

/// Losses of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
}

impl UpdateStats {
    pub fn is_finite(&self) -> bool {
        self.critic_loss.is_finite() && self.actor_loss.map_or(true, f64::is_finite)
    }
}

/// A centralized learner.
pub trait Algorithm: Send {
    fn kind(&self) -> AgentKind;

    fn obs_dim(&self) -> usize;

    /// Immutable policy for acting (cheap clone of the current parameters).
    fn snapshot(&self) -> PolicySnapshot;

    /// Ingest one pooled transition.
    fn absorb(&mut self, tr: PooledTransition);

    /// One gradient update; `None` when there is not enough data yet.
    fn update(&mut self) -> Option<UpdateStats>;

    /// Serialize every parameter tensor.
    fn write_checkpoint(&self, w: &mut dyn std::io::Write) -> std::io::Result<()>;
}

/// Construct the learner for `kind`.
///
/// `train_steps` fixes exploration schedules; `seed` derives the learner's
/// init and batch-sampling streams.
pub fn build_agent(
    kind: AgentKind,
    hyper: &AgentHyper,
    train_steps: u64,
    seed: u64,
) -> Result<Box<dyn Algorithm>> {
    let errs = hyper.validate();
    if !errs.is_empty() {
        return Err(SimError::Config(errs));
    }
    let eps = EpsSchedule {
        initial: hyper.eps_initial,
        final_value: hyper.eps_final,
        anneal_steps: (hyper.eps_anneal_frac * train_steps as f64).round() as u64,
    };
    Ok(match kind {
        AgentKind::Dqn => Box::new(QAgent::new(false, OBS_DIM, DISCRETE_ACTIONS, hyper, eps, seed)),
        AgentKind::Ddqn => Box::new(QAgent::new(true, OBS_DIM, DISCRETE_ACTIONS, hyper, eps, seed)),
        AgentKind::Ddpg => Box::new(DdpgAgent::new(OBS_DIM, ACT_DIM, hyper, seed)),
        AgentKind::Pgac => Box::new(PgacAgent::new(OBS_DIM, ACT_DIM, hyper, seed)),
        AgentKind::Td3 | AgentKind::Td3Ts => {
            Box::new(Td3Agent::new(kind, OBS_DIM, ACT_DIM, hyper, seed))
        }
    })
}

/// Columns of a sampled batch of continuous-action transitions.
pub(crate) struct ContBatch {
    pub obs: Array2<f64>,
    pub act: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub not_done: Array1<f64>,
}

pub(crate) fn gather_continuous(
    replay: &ReplayBuffer<PooledTransition>,
    idx: &[usize],
    obs_dim: usize,
    act_dim: usize,
) -> ContBatch {
    let n = idx.len();
    let mut obs = Array2::zeros((n, obs_dim));
    let mut act = Array2::zeros((n, act_dim));
    let mut reward = Array1::zeros(n);
    let mut next_obs = Array2::zeros((n, obs_dim));
    let mut not_done = Array1::zeros(n);
    for (row, &i) in idx.iter().enumerate() {
        let t = &replay.get(i).transition;
        for (c, &v) in t.obs.iter().enumerate() {
            obs[(row, c)] = v;
        }
        if let RawAction::Continuous(a) = &t.action {
            for (c, &v) in a.iter().enumerate() {
                act[(row, c)] = v;
            }
        }
        reward[row] = t.reward;
        for (c, &v) in t.next_obs.iter().enumerate() {
            next_obs[(row, c)] = v;
        }
        not_done[row] = if t.done { 0.0 } else { 1.0 };
    }
    ContBatch {
        obs,
        act,
        reward,
        next_obs,
        not_done,
    }
}

/// `[a | b]` column concatenation.
pub(crate) fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(ndarray::s![.., ..a.ncols()]).assign(a);
    out.slice_mut(ndarray::s![.., a.ncols()..]).assign(b);
    out
}
