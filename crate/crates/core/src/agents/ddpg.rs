//! Deep deterministic policy gradient.
//!
//! Deterministic tanh actor plus a single Q critic, both with slow target
//! copies. The critic regresses to `r + gamma * Q_target(s', mu_target(s'))`;
//! the actor ascends the critic's gradient at `mu(s)`.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::nn::{adam_step, soft_update, Activation, AdamState, Mlp};
use crate::replay::{PooledTransition, ReplayBuffer};
use crate::rng::substream;

use super::{
    checkpoint, concat_cols, gather_continuous, Algorithm, AgentHyper, AgentKind, PolicySnapshot,
    UpdateStats,
};

pub struct DdpgAgent {
    obs_dim: usize,
    act_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    critic: Mlp,
    critic_target: Mlp,
    adam_actor: AdamState,
    adam_critic: AdamState,
    replay: ReplayBuffer<PooledTransition>,
    hyper: AgentHyper,
    rng: ChaCha8Rng,
}

impl DdpgAgent {
    pub fn new(obs_dim: usize, act_dim: usize, hyper: &AgentHyper, seed: u64) -> Self {
        let mut init_rng = substream(seed, "init");
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&hyper.hidden);
        actor_sizes.push(act_dim);
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, &mut init_rng);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(&hyper.hidden);
        critic_sizes.push(1);
        let critic = Mlp::new(&critic_sizes, Activation::Identity, &mut init_rng);
        Self {
            obs_dim,
            act_dim,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            adam_actor: AdamState::new(&actor),
            adam_critic: AdamState::new(&critic),
            actor,
            critic,
            replay: ReplayBuffer::new(hyper.replay_capacity),
            hyper: hyper.clone(),
            rng: substream(seed, "learn"),
        }
    }

    /// Exact actor gradient of `mean_b Q(s_b, mu(s_b))` through the critic,
    /// exposed for the finite-difference oracle.
    pub fn actor_gradient(&self, obs: &Array2<f64>) -> crate::nn::MlpGrads {
        let (a_pi, cache_a) = self.actor.forward(obs.view()).expect("shape ok");
        let joint = concat_cols(obs, &a_pi);
        let (_, cache_c) = self.critic.forward(joint.view()).expect("shape ok");
        let n = obs.nrows() as f64;
        let d_q = Array2::from_elem((obs.nrows(), 1), 1.0 / n);
        let (_, d_joint) = self.critic.backward(&cache_c, d_q).expect("fresh cache");
        let d_action = d_joint.slice(ndarray::s![.., self.obs_dim..]).to_owned();
        let (grads, _) = self.actor.backward(&cache_a, d_action).expect("fresh cache");
        grads
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic_value(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mut joint = obs.to_vec();
        joint.extend_from_slice(action);
        self.critic.forward1(&joint)[0]
    }
}

impl Algorithm for DdpgAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot::Deterministic {
            actor: self.actor.clone(),
            noise_sigma: self.hyper.action_noise_sigma,
        }
    }

    fn absorb(&mut self, tr: PooledTransition) {
        self.replay.push(tr);
    }

    fn update(&mut self) -> Option<UpdateStats> {
        let b = self.hyper.batch_size;
        if self.replay.len() < b {
            return None;
        }
        let idx = self.replay.sample_indices(b, &mut self.rng);
        let batch = gather_continuous(&self.replay, &idx, self.obs_dim, self.act_dim);

        // Critic target: r + gamma * Q_target(s', mu_target(s')).
        let (a_next, _) = self.actor_target.forward(batch.next_obs.view()).expect("shape ok");
        let joint_next = concat_cols(&batch.next_obs, &a_next);
        let (q_next, _) = self.critic_target.forward(joint_next.view()).expect("shape ok");
        let q_next = q_next.index_axis(Axis(1), 0);
        let targets = &batch.reward + &(self.hyper.gamma * &batch.not_done * &q_next);

        // Critic regression.
        let joint = concat_cols(&batch.obs, &batch.act);
        let (pred, cache_c) = self.critic.forward(joint.view()).expect("shape ok");
        let mut d_out = Array2::zeros((b, 1));
        let mut critic_loss = 0.0;
        for row in 0..b {
            let err = pred[(row, 0)] - targets[row];
            critic_loss += err * err;
            d_out[(row, 0)] = 2.0 * err / b as f64;
        }
        critic_loss /= b as f64;
        let (grads_c, _) = self.critic.backward(&cache_c, d_out).expect("fresh cache");
        adam_step(&mut self.critic, &grads_c, &mut self.adam_critic, self.hyper.critic_lr);

        // Actor ascent on mean Q(s, mu(s)).
        let (a_pi, cache_a) = self.actor.forward(batch.obs.view()).expect("shape ok");
        let joint_pi = concat_cols(&batch.obs, &a_pi);
        let (q_pi, cache_c2) = self.critic.forward(joint_pi.view()).expect("shape ok");
        let actor_loss = -q_pi.sum() / b as f64;
        let d_q = Array2::from_elem((b, 1), -1.0 / b as f64);
        let (_, d_joint) = self.critic.backward(&cache_c2, d_q).expect("fresh cache");
        let d_action = d_joint.slice(ndarray::s![.., self.obs_dim..]).to_owned();
        let (grads_a, _) = self.actor.backward(&cache_a, d_action).expect("fresh cache");
        adam_step(&mut self.actor, &grads_a, &mut self.adam_actor, self.hyper.actor_lr);

        soft_update(&mut self.actor_target, &self.actor, self.hyper.tau).expect("same shapes");
        soft_update(&mut self.critic_target, &self.critic, self.hyper.tau).expect("same shapes");

        Some(UpdateStats {
            critic_loss,
            actor_loss: Some(actor_loss),
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
        dump(&self.actor, "actor", w);
        dump(&self.actor_target, "actor_target", w);
        dump(&self.critic, "critic", w);
        dump(&self.critic_target, "critic_target", w);
        result?;
        checkpoint::write_footer(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{ActMeta, RawAction, Transition};

    fn tiny_hyper() -> AgentHyper {
        AgentHyper {
            hidden: vec![8, 8],
            batch_size: 16,
            ..AgentHyper::defaults_for(AgentKind::Ddpg)
        }
    }

    fn fill(agent: &mut DdpgAgent, n: usize, gamma_zero_reward: f64) {
        for i in 0..n {
            agent.absorb(PooledTransition {
                agent_id: 0,
                transition: Transition {
                    obs: vec![0.1 * (i % 5) as f64; 3],
                    action: RawAction::Continuous(vec![0.3, -0.2]),
                    reward: gamma_zero_reward,
                    next_obs: vec![0.2; 3],
                    done: false,
                },
                meta: ActMeta::default(),
            });
        }
    }

    #[test]
    fn gamma_zero_critic_target_is_reward() {
        let mut hyper = tiny_hyper();
        hyper.gamma = 0.0;
        // Huge critic lr so one step moves predictions visibly toward reward.
        hyper.critic_lr = 1e-2;
        let mut agent = DdpgAgent::new(3, 2, &hyper, 5);
        fill(&mut agent, 64, 0.7);
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let s = agent.update().unwrap();
            last = s.critic_loss;
        }
        // With a constant reward of 0.7 and gamma = 0 the critic must fit it.
        assert!(last < 1e-3, "critic loss {last} did not approach zero");
        let q = agent.critic_value(&[0.1, 0.1, 0.1], &[0.3, -0.2]);
        assert!((q - 0.7).abs() < 0.05, "critic value {q} not near 0.7");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let hyper = tiny_hyper();
        let mut agent = DdpgAgent::new(3, 2, &hyper, 7);
        // Give the critic nonzero weights so the objective is not flat.
        let mut rng = substream(11, "fd");
        agent.critic = Mlp::new(&[5, 8, 8, 1], Activation::Identity, &mut rng);
        for l in &mut agent.critic.layers {
            l.w.mapv_inplace(|v| v + 0.05);
        }
        use rand::Rng;
        let obs = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() - 0.5);
        let analytic = agent.actor_gradient(&obs);

        let objective = |agent: &DdpgAgent| -> f64 {
            let (a, _) = agent.actor.forward(obs.view()).unwrap();
            let joint = concat_cols(&obs, &a);
            let (q, _) = agent.critic.forward(joint.view()).unwrap();
            q.sum() / obs.nrows() as f64
        };
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for li in 0..agent.actor.layers.len() {
            for idx in 0..agent.actor.layers[li].w.len() {
                let orig = agent.actor.layers[li].w.as_slice().unwrap()[idx];
                agent.actor.layers[li].w.as_slice_mut().unwrap()[idx] = orig + h;
                let up = objective(&agent);
                agent.actor.layers[li].w.as_slice_mut().unwrap()[idx] = orig - h;
                let dn = objective(&agent);
                agent.actor.layers[li].w.as_slice_mut().unwrap()[idx] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = analytic.w[li].as_slice().unwrap()[idx];
                let denom = an.abs().max(fd.abs());
                if denom > 1e-7 {
                    max_rel = max_rel.max((an - fd).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-3, "actor gradient mismatch: {max_rel}");
    }

    #[test]
    fn tau_one_copies_online_into_target() {
        let hyper = AgentHyper {
            tau: 1.0,
            ..tiny_hyper()
        };
        let mut agent = DdpgAgent::new(3, 2, &hyper, 3);
        fill(&mut agent, 32, 0.1);
        agent.update().unwrap();
        for (t, o) in agent.actor_target.layers.iter().zip(&agent.actor.layers) {
            assert_eq!(t.w, o.w);
        }
        for (t, o) in agent.critic_target.layers.iter().zip(&agent.critic.layers) {
            assert_eq!(t.w, o.w);
        }
    }
}
