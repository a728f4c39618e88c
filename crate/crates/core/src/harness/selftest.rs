//! The invariant and property suite behind `oransim selftest`.
//!
//! Each check returns a pass/fail result with details; the CLI prints one
//! line per check and exits nonzero on any failure. The acceptance tests
//! call the same functions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{
    argmax, ddqn_target, dqn_target, epsilon_greedy_select, AgentHyper, AgentKind, Algorithm,
    Td3Agent,
};
use crate::env::{EnvConfig, RrmEnv};
use crate::error::Result;
use crate::nn::{soft_update, Activation, Mlp};
use crate::replay::{ActMeta, PooledTransition, RawAction, Transition};
use crate::rng::substream;
use crate::scheduler::PunctureAction;
use crate::thompson::BetaPosterior;
use crate::traffic::TrafficConfig;

use super::ccdf::{empirical_ccdf, is_monotone_ccdf};
use super::config::RunConfig;
use super::run::run_experiment;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, details: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            details,
        }
    }
}

/// Run the whole suite.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    vec![
        gradient_suite(seed, 100),
        conservation_fuzz(seed, 10_000),
        ccdf_properties(seed),
        unit_contracts(seed),
        determinism_micro(seed),
    ]
}

/// Central-difference check of one randomized network; returns the largest
/// relative error across all parameters.
pub fn gradcheck_max_rel(rng: &mut ChaCha8Rng, sizes: &[usize], out_act: Activation) -> f64 {
    let mut net = Mlp::new(sizes, out_act, rng);
    for layer in &mut net.layers {
        layer.w.mapv_inplace(|v| v + 0.05);
        layer.b.mapv_inplace(|v| v + 0.01);
    }
    let batch = 4;
    let x = ndarray::Array2::from_shape_fn((batch, sizes[0]), |_| rng.random::<f64>() * 2.0 - 1.0);
    let coeffs = ndarray::Array2::from_shape_fn((batch, *sizes.last().expect("sizes")), |_| {
        rng.random::<f64>() * 2.0 - 1.0
    });
    let loss = |net: &Mlp| -> f64 {
        let (y, _) = net.forward(x.view()).expect("shape ok");
        (&y * &coeffs).sum()
    };
    let (_, cache) = net.forward(x.view()).expect("shape ok");
    let (grads, _) = net.backward(&cache, coeffs.clone()).expect("fresh cache");
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for li in 0..net.layers.len() {
        for idx in 0..net.layers[li].w.len() {
            let orig = net.layers[li].w.as_slice().expect("contiguous")[idx];
            net.layers[li].w.as_slice_mut().expect("contiguous")[idx] = orig + h;
            let up = loss(&net);
            net.layers[li].w.as_slice_mut().expect("contiguous")[idx] = orig - h;
            let dn = loss(&net);
            net.layers[li].w.as_slice_mut().expect("contiguous")[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grads.w[li].as_slice().expect("contiguous")[idx];
            let denom = an.abs().max(fd.abs());
            if denom > 1e-8 {
                max_rel = max_rel.max((an - fd).abs() / denom);
            }
        }
        for idx in 0..net.layers[li].b.len() {
            let orig = net.layers[li].b[idx];
            net.layers[li].b[idx] = orig + h;
            let up = loss(&net);
            net.layers[li].b[idx] = orig - h;
            let dn = loss(&net);
            net.layers[li].b[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = grads.b[li][idx];
            let denom = an.abs().max(fd.abs());
            if denom > 1e-8 {
                max_rel = max_rel.max((an - fd).abs() / denom);
            }
        }
    }
    max_rel
}

/// Analytic gradients match central finite differences within 1e-4 relative
/// error on `instances` randomized small networks with 8-dimensional inputs.
pub fn gradient_suite(seed: u64, instances: usize) -> CheckResult {
    let started = std::time::Instant::now();
    let mut rng = substream(seed, "gradcheck");
    let mut worst = 0.0f64;
    for i in 0..instances {
        let depth = 1 + i % 3;
        let mut sizes = vec![8usize];
        for d in 0..depth {
            sizes.push(4 + ((i + d * 3) % 9));
        }
        sizes.push(1 + i % 4);
        let act = match i % 3 {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            _ => Activation::Identity,
        };
        let rel = gradcheck_max_rel(&mut rng, &sizes, act);
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed().as_secs_f64();
    CheckResult::new(
        "gradient_suite",
        worst < 1e-4,
        format!("{instances} instances, worst relative error {worst:.2e}, {elapsed:.1}s"),
    )
}

/// Packet and grid conservation at every slot of a fuzzed multi-episode run.
pub fn conservation_fuzz(seed: u64, slots: u64) -> CheckResult {
    let cfg = EnvConfig {
        cells: 2,
        rb_count: 20,
        embb_ues_per_cell: 2,
        urllc_ues_per_cell: 4,
        traffic: TrafficConfig {
            phi: 20.0,
            ..TrafficConfig::default()
        },
        horizon_slots: 500,
        ..EnvConfig::default()
    };
    let mut env = match RrmEnv::new(cfg) {
        Ok(env) => env,
        Err(e) => return CheckResult::new("conservation_fuzz", false, e.to_string()),
    };
    let mut rng = substream(seed, "fuzz-actions");
    let mut episode = 0u64;
    if let Err(e) = env.reset(substream_seed(seed, episode)) {
        return CheckResult::new("conservation_fuzz", false, e.to_string());
    }
    let mut checked = 0u64;
    while checked < slots {
        if env.is_done() {
            episode += 1;
            if let Err(e) = env.reset(substream_seed(seed, episode)) {
                return CheckResult::new("conservation_fuzz", false, e.to_string());
            }
        }
        let acts: Vec<PunctureAction> = (0..2)
            .map(|_| PunctureAction::clipped(rng.random::<f64>(), 0.1 + 0.9 * rng.random::<f64>()))
            .collect();
        // step() itself verifies conservation and fails loudly
        match env.step(&acts) {
            Ok(_) => {}
            Err(e) => return CheckResult::new("conservation_fuzz", false, e.to_string()),
        }
        let (a, s, d, w) = env.totals();
        if a != s + d + w {
            return CheckResult::new(
                "conservation_fuzz",
                false,
                format!("slot {checked}: {a} != {s} + {d} + {w}"),
            );
        }
        for cell in 0..2 {
            let (e, u, i) = env.grid_counts(cell);
            if e + u + i != 40 {
                return CheckResult::new(
                    "conservation_fuzz",
                    false,
                    format!("slot {checked}: grid counts {e}+{u}+{i} != 40"),
                );
            }
        }
        checked += 1;
    }
    CheckResult::new(
        "conservation_fuzz",
        true,
        format!("{checked} slots across {} episodes", episode + 1),
    )
}

fn substream_seed(seed: u64, episode: u64) -> u64 {
    crate::rng::derive_seed_indexed(seed, "fuzz-episode", episode)
}

/// Every emitted CCDF is monotone nonincreasing, 1 below the minimum and 0 at
/// the maximum.
pub fn ccdf_properties(seed: u64) -> CheckResult {
    let mut rng = substream(seed, "ccdf-prop");
    for case in 0..200 {
        let n = 1 + rng.random_range(0..300);
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                // mix of ties and spread values, including zeros
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    (rng.random::<f64>() * 10.0).round() / 10.0
                }
            })
            .collect();
        let points = match empirical_ccdf(&samples) {
            Ok(p) => p,
            Err(e) => return CheckResult::new("ccdf_properties", false, e.to_string()),
        };
        if !is_monotone_ccdf(&points) {
            return CheckResult::new("ccdf_properties", false, format!("case {case} not monotone"));
        }
        if super::ccdf::ccdf_at(&points, points[0].0 - 1.0) != 1.0 {
            return CheckResult::new("ccdf_properties", false, "CCDF below min != 1".into());
        }
        if super::ccdf::ccdf_at(&points, points.last().expect("nonempty").0) != 0.0 {
            return CheckResult::new("ccdf_properties", false, "CCDF at max != 0".into());
        }
    }
    CheckResult::new("ccdf_properties", true, "200 randomized sample sets".into())
}

/// Exact algorithm unit contracts.
pub fn unit_contracts(seed: u64) -> CheckResult {
    let mut failures = Vec::new();

    // TD3 twin-min target with injected critic outputs.
    if (crate::agents::td3_target(1.0, false, 0.9, 2.0, 3.0) - 2.8).abs() > 1e-12 {
        failures.push("td3 twin-min target".to_string());
    }
    if crate::agents::td3_target(1.0, true, 0.9, -5.0, 5.0) != 1.0 {
        failures.push("td3 terminal target".to_string());
    }

    // Smoothing noise clip and action clip.
    let mut a = [0.9, -0.9];
    crate::agents::smooth_target_action(&mut a, &[10.0, -10.0], 0.5);
    if a != [1.0, -1.0] {
        failures.push("td3 smoothing clip".to_string());
    }

    // Delayed updates: actor frozen on odd update counts.
    let hyper = AgentHyper {
        hidden: vec![8, 8],
        batch_size: 8,
        ..AgentHyper::defaults_for(AgentKind::Td3)
    };
    let mut agent = Td3Agent::new(AgentKind::Td3, 3, 2, &hyper, seed);
    for i in 0..16 {
        agent.absorb(PooledTransition {
            agent_id: 0,
            transition: Transition {
                obs: vec![0.1 * (i % 3) as f64; 3],
                action: RawAction::Continuous(vec![0.1, 0.2]),
                reward: 0.3,
                next_obs: vec![0.1; 3],
                done: false,
            },
            meta: ActMeta::default(),
        });
    }
    let before: Vec<f64> = agent.actor().layers[0].w.iter().copied().collect();
    let first = agent.update().expect("data available");
    let after: Vec<f64> = agent.actor().layers[0].w.iter().copied().collect();
    if first.actor_loss.is_some() || before != after {
        failures.push("td3 delayed policy update".to_string());
    }
    let second = agent.update().expect("data available");
    if second.actor_loss.is_none() {
        failures.push("td3 actor update on delay boundary".to_string());
    }

    // Epsilon 0 is exact argmax with deterministic tie-break.
    let mut rng = substream(seed, "contracts");
    for _ in 0..50 {
        if epsilon_greedy_select(&[2.0, 2.0, 1.0], 0.0, &mut rng).expect("nonempty") != 0 {
            failures.push("eps=0 argmax tie-break".to_string());
            break;
        }
    }
    if argmax(&[1.0, 5.0, 5.0]) != 1 {
        failures.push("argmax tie-break".to_string());
    }

    // DQN / DDQN targets.
    if dqn_target(0.0, false, 0.5, &[1.0, 5.0, 3.0]) != 2.5 {
        failures.push("dqn target".to_string());
    }
    if ddqn_target(1.0, false, 1.0, &[7.0, 1.0], &[2.0, 9.0]) != 3.0 {
        failures.push("ddqn decoupling".to_string());
    }

    // Beta conjugate updates.
    let mut p = BetaPosterior::uniform(1);
    p.ts_update(0, true);
    p.ts_update(0, false);
    if (p.alpha(0), p.beta(0)) != (2.0, 2.0) {
        failures.push("beta conjugate update".to_string());
    }

    // Soft update endpoints.
    let mut rng2 = substream(seed, "contracts-nets");
    let online = Mlp::new(&[4, 4], Activation::Identity, &mut rng2);
    let mut target = Mlp::new(&[4, 4], Activation::Identity, &mut rng2);
    let frozen = target.clone();
    soft_update(&mut target, &online, 0.0).expect("shapes match");
    if target.layers[0].w != frozen.layers[0].w {
        failures.push("soft update tau=0".to_string());
    }
    soft_update(&mut target, &online, 1.0).expect("shapes match");
    if target.layers[0].w != online.layers[0].w {
        failures.push("soft update tau=1".to_string());
    }

    CheckResult::new(
        "unit_contracts",
        failures.is_empty(),
        if failures.is_empty() {
            "td3 target/delay/smoothing, eps-greedy, dqn/ddqn targets, beta, soft update".into()
        } else {
            failures.join("; ")
        },
    )
}

/// Two tiny runs with the same config and seed produce byte-identical
/// metrics streams.
pub fn determinism_micro(seed: u64) -> CheckResult {
    let mut cfg = RunConfig::defaults_for(AgentKind::Td3);
    cfg.seed = seed;
    cfg.train_steps = 150;
    cfg.eval_episodes = 1;
    cfg.eval_window_slots = 25;
    cfg.env.cells = 2;
    cfg.env.rb_count = 10;
    cfg.env.embb_ues_per_cell = 2;
    cfg.env.urllc_ues_per_cell = 2;
    cfg.env.horizon_slots = 50;
    cfg.env.traffic.phi = 5.0;
    cfg.hyper.hidden = vec![8, 8];
    cfg.hyper.batch_size = 16;
    cfg.sync.sync_period = 50;
    cfg.sync.central_updates_per_round = 10;

    let root = std::env::temp_dir().join(format!(
        "oransim-selftest-{}-{seed}",
        std::process::id()
    ));
    let result = (|| -> Result<bool> {
        let dir_a = root.join("a");
        let dir_b = root.join("b");
        run_experiment(&cfg, &dir_a)?;
        run_experiment(&cfg, &dir_b)?;
        let a = std::fs::read(dir_a.join(super::run::METRICS_FILE))?;
        let b = std::fs::read(dir_b.join(super::run::METRICS_FILE))?;
        Ok(!a.is_empty() && a == b)
    })();
    let _ = std::fs::remove_dir_all(&root);
    match result {
        Ok(true) => CheckResult::new(
            "determinism_micro",
            true,
            "two 150-step runs produced byte-identical metrics".into(),
        ),
        Ok(false) => CheckResult::new("determinism_micro", false, "metrics streams differ".into()),
        Err(e) => CheckResult::new("determinism_micro", false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for check in run_selftest(12345) {
            assert!(check.passed, "{}: {}", check.name, check.details);
        }
    }
}
