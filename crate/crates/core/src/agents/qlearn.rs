//! Value-based agents over the discrete action lattice: DQN and DDQN.
//!
//! Both regress a Q-network toward bootstrapped targets from a slowly
//! tracking target network. DQN takes the max over the target network's
//! values; DDQN decouples selection (online network) from evaluation (target
//! network), which curbs the max operator's overestimation bias.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::nn::{adam_step, soft_update, Activation, AdamState, Mlp};
use crate::replay::{PooledTransition, RawAction, ReplayBuffer};
use crate::rng::substream;

use super::{argmax, checkpoint, Algorithm, AgentHyper, AgentKind, EpsSchedule, PolicySnapshot, UpdateStats};

/// DQN bootstrap target: `r + gamma * max_a Q_target(s', a)`, or `r` alone on
/// terminal transitions.
pub fn dqn_target(reward: f64, done: bool, gamma: f64, q_next_target: &[f64]) -> f64 {
    if done {
        return reward;
    }
    let max = q_next_target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reward + gamma * max
}

/// DDQN target: the online network picks the argmax action, the target
/// network evaluates it.
pub fn ddqn_target(
    reward: f64,
    done: bool,
    gamma: f64,
    q_next_online: &[f64],
    q_next_target: &[f64],
) -> f64 {
    if done {
        return reward;
    }
    let a_star = argmax(q_next_online);
    reward + gamma * q_next_target[a_star]
}

pub struct QAgent {
    double: bool,
    obs_dim: usize,
    n_actions: usize,
    q: Mlp,
    q_target: Mlp,
    adam: AdamState,
    replay: ReplayBuffer<PooledTransition>,
    hyper: AgentHyper,
    eps: EpsSchedule,
    rng: ChaCha8Rng,
}

impl QAgent {
    pub fn new(
        double: bool,
        obs_dim: usize,
        n_actions: usize,
        hyper: &AgentHyper,
        eps: EpsSchedule,
        seed: u64,
    ) -> Self {
        let mut init_rng = substream(seed, "init");
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&hyper.hidden);
        sizes.push(n_actions);
        let q = Mlp::new(&sizes, Activation::Identity, &mut init_rng);
        let q_target = q.clone();
        let adam = AdamState::new(&q);
        Self {
            double,
            obs_dim,
            n_actions,
            q,
            q_target,
            adam,
            replay: ReplayBuffer::new(hyper.replay_capacity),
            hyper: hyper.clone(),
            eps,
            rng: substream(seed, "learn"),
        }
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.q.forward1(obs)
    }
}

impl Algorithm for QAgent {
    fn kind(&self) -> AgentKind {
        if self.double {
            AgentKind::Ddqn
        } else {
            AgentKind::Dqn
        }
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot::EpsGreedyQ {
            q: self.q.clone(),
            eps: self.eps,
        }
    }

    fn absorb(&mut self, tr: PooledTransition) {
        debug_assert!(matches!(tr.transition.action, RawAction::Discrete(_)));
        self.replay.push(tr);
    }

    fn update(&mut self) -> Option<UpdateStats> {
        let b = self.hyper.batch_size;
        if self.replay.len() < b {
            return None;
        }
        let idx = self.replay.sample_indices(b, &mut self.rng);

        let mut obs = Array2::zeros((b, self.obs_dim));
        let mut next_obs = Array2::zeros((b, self.obs_dim));
        let mut actions = vec![0usize; b];
        let mut rewards = Array1::zeros(b);
        let mut dones = vec![false; b];
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.replay.get(i).transition;
            for (c, &v) in t.obs.iter().enumerate() {
                obs[(row, c)] = v;
            }
            for (c, &v) in t.next_obs.iter().enumerate() {
                next_obs[(row, c)] = v;
            }
            if let RawAction::Discrete(a) = t.action {
                actions[row] = a;
            }
            rewards[row] = t.reward;
            dones[row] = t.done;
        }

        let (qn_target, _) = self.q_target.forward(next_obs.view()).expect("shape ok");
        let qn_online = if self.double {
            Some(self.q.forward(next_obs.view()).expect("shape ok").0)
        } else {
            None
        };
        let mut targets = Array1::zeros(b);
        for row in 0..b {
            let tgt_row = qn_target.row(row);
            let tgt = tgt_row.as_slice().expect("contiguous");
            targets[row] = match &qn_online {
                Some(online) => ddqn_target(
                    rewards[row],
                    dones[row],
                    self.hyper.gamma,
                    online.row(row).as_slice().expect("contiguous"),
                    tgt,
                ),
                None => dqn_target(rewards[row], dones[row], self.hyper.gamma, tgt),
            };
        }

        let (pred, cache) = self.q.forward(obs.view()).expect("shape ok");
        let mut d_out = Array2::zeros((b, self.n_actions));
        let mut loss = 0.0;
        for row in 0..b {
            let err = pred[(row, actions[row])] - targets[row];
            loss += err * err;
            d_out[(row, actions[row])] = 2.0 * err / b as f64;
        }
        loss /= b as f64;

        let (grads, _) = self.q.backward(&cache, d_out).expect("fresh cache");
        adam_step(&mut self.q, &grads, &mut self.adam, self.hyper.critic_lr);
        soft_update(&mut self.q_target, &self.q, self.hyper.tau).expect("same shapes");

        Some(UpdateStats {
            critic_loss: loss,
            actor_loss: None,
        })
    }

    fn write_checkpoint(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        checkpoint::write_header(w, self.kind().as_str())?;
        let mut result = Ok(());
        let mut dump = |net: &Mlp, prefix: &str, w: &mut dyn std::io::Write| {
            net.visit_tensors(prefix, |name, shape, values| {
                if result.is_ok() {
                    result = checkpoint::write_tensor(w, &name, &shape, values);
                }
            });
        };
        dump(&self.q, "q", w);
        dump(&self.q_target, "q_target", w);
        result?;
        checkpoint::write_footer(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{ActMeta, Transition};

    #[test]
    fn dqn_target_cases() {
        // terminal: target = r
        assert_eq!(dqn_target(0.7, true, 0.9, &[5.0, 9.0]), 0.7);
        // r=0, gamma=0.5, max = 5 -> 2.5
        assert_eq!(dqn_target(0.0, false, 0.5, &[1.0, 5.0, 3.0]), 2.5);
        // gamma = 0 -> r
        assert_eq!(dqn_target(0.3, false, 0.0, &[100.0]), 0.3);
    }

    #[test]
    fn ddqn_target_decouples_selection_from_evaluation() {
        // online argmax is index 0, target evaluates it: 1 + 1.0 * 2 = 3, not 10.
        let online = [7.0, 1.0];
        let target = [2.0, 9.0];
        assert_eq!(ddqn_target(1.0, false, 1.0, &online, &target), 3.0);
        // online == target networks: ddqn degenerates to dqn
        let q = [0.5, 4.0, 2.0];
        assert_eq!(
            ddqn_target(0.2, false, 0.9, &q, &q),
            dqn_target(0.2, false, 0.9, &q)
        );
        // terminal
        assert_eq!(ddqn_target(0.4, true, 0.9, &online, &target), 0.4);
    }

    fn push_n(agent: &mut QAgent, n: usize) {
        for i in 0..n {
            agent.absorb(PooledTransition {
                agent_id: 0,
                transition: Transition {
                    obs: vec![0.1; agent.obs_dim],
                    action: RawAction::Discrete(i % agent.n_actions),
                    reward: (i % 3) as f64 * 0.1,
                    next_obs: vec![0.2; agent.obs_dim],
                    done: i % 7 == 0,
                },
                meta: ActMeta::default(),
            });
        }
    }

    #[test]
    fn update_needs_a_full_batch() {
        let hyper = AgentHyper::defaults_for(AgentKind::Dqn);
        let eps = EpsSchedule {
            initial: 1.0,
            final_value: 0.05,
            anneal_steps: 10,
        };
        let mut agent = QAgent::new(false, 4, 5, &hyper, eps, 9);
        assert!(agent.update().is_none());
        push_n(&mut agent, 64);
        let stats = agent.update().expect("enough data");
        assert!(stats.critic_loss.is_finite());
    }

    #[test]
    fn twin_seeds_stay_identical() {
        let hyper = AgentHyper::defaults_for(AgentKind::Ddqn);
        let eps = EpsSchedule {
            initial: 0.5,
            final_value: 0.05,
            anneal_steps: 10,
        };
        let mut a = QAgent::new(true, 4, 5, &hyper, eps, 42);
        let mut b = QAgent::new(true, 4, 5, &hyper, eps, 42);
        push_n(&mut a, 80);
        push_n(&mut b, 80);
        for _ in 0..5 {
            let sa = a.update().unwrap();
            let sb = b.update().unwrap();
            assert_eq!(sa.critic_loss.to_bits(), sb.critic_loss.to_bits());
        }
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_checkpoint(&mut ca).unwrap();
        b.write_checkpoint(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }
}
