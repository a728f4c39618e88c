//! Cartesian sweeps over agents, arrival rates and seeds.
//!
//! Runs execute in parallel worker threads (each run is single-threaded and
//! owns its directory). A run directory that already holds a completed run
//! of the identical config is reused, which makes sweeps resumable.

use std::path::Path;

use rayon::prelude::*;

use crate::agents::{AgentHyper, AgentKind};
use crate::error::Result;

use super::config::RunConfig;
use super::run::{existing_run_matches, load_summary, load_timing, run_experiment, RunOutput};

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Template config; per-point fields (agent, seed, phi) are overwritten.
    pub base: RunConfig,
    pub agents: Vec<AgentKind>,
    pub phis: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Worker threads (0 = one per CPU).
    pub jobs: usize,
}

impl SweepSpec {
    /// Expand into (config, directory-name) points, in deterministic order.
    pub fn points(&self) -> Vec<(RunConfig, String)> {
        let base_is_default_hyper =
            self.base.hyper == AgentHyper::defaults_for(self.base.agent);
        let base_is_default_sync = self.base.sync == RunConfig::default_sync_for(self.base.agent);
        let mut points = Vec::new();
        for &agent in &self.agents {
            for &phi in &self.phis {
                for &seed in &self.seeds {
                    let mut cfg = self.base.clone();
                    cfg.agent = agent;
                    cfg.seed = seed;
                    cfg.env.traffic.phi = phi;
                    // A template that kept stock hyper-parameters follows
                    // each agent's own defaults; explicit overrides apply to
                    // every agent verbatim.
                    if base_is_default_hyper {
                        cfg.hyper = AgentHyper::defaults_for(agent);
                    } else {
                        cfg.hyper.ts.enabled = agent == AgentKind::Td3Ts;
                    }
                    if base_is_default_sync {
                        cfg.sync = RunConfig::default_sync_for(agent);
                    }
                    let name = format!("{}_phi{}_seed{}", agent.as_str(), phi, seed);
                    points.push((cfg, name));
                }
            }
        }
        points
    }
}

/// Execute the sweep under `out_root`; returns outputs in point order.
pub fn run_sweep(spec: &SweepSpec, out_root: &Path) -> Result<Vec<RunOutput>> {
    std::fs::create_dir_all(out_root)?;
    let points = spec.points();
    let jobs = if spec.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        spec.jobs
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.min(points.len().max(1)))
        .build()
        .expect("thread pool");
    let results: Vec<Result<RunOutput>> = pool.install(|| {
        points
            .par_iter()
            .map(|(cfg, name)| {
                let dir = out_root.join(name);
                if existing_run_matches(&dir, cfg) {
                    log::info!("reusing completed run {}", dir.display());
                    return Ok(RunOutput {
                        summary: load_summary(&dir)?,
                        timing: load_timing(&dir)?,
                        dir,
                    });
                }
                run_experiment(cfg, &dir)
            })
            .collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::tests::tiny_config;

    #[test]
    fn sweep_expands_cartesian_product() {
        let spec = SweepSpec {
            base: RunConfig::default(),
            agents: vec![AgentKind::Dqn, AgentKind::Td3],
            phis: vec![80.0, 140.0],
            seeds: vec![1, 2, 3],
            jobs: 1,
        };
        let points = spec.points();
        assert_eq!(points.len(), 12);
        assert_eq!(points[0].1, "dqn_phi80_seed1");
        // per-agent hyper defaults apply when the template is stock
        let td3_point = points.iter().find(|(c, _)| c.agent == AgentKind::Td3).unwrap();
        assert_eq!(td3_point.0.hyper.actor_lr, 1e-5);
        let dqn_point = points.iter().find(|(c, _)| c.agent == AgentKind::Dqn).unwrap();
        assert_eq!(dqn_point.0.hyper.critic_lr, 1e-3);
    }

    #[test]
    fn sweep_runs_and_reuses() {
        let root = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            base: tiny_config(AgentKind::Td3, 0),
            agents: vec![AgentKind::Td3],
            phis: vec![5.0],
            seeds: vec![1, 2],
            jobs: 2,
        };
        let first = run_sweep(&spec, root.path()).unwrap();
        assert_eq!(first.len(), 2);
        // second invocation reuses both runs (fast path)
        let started = std::time::Instant::now();
        let second = run_sweep(&spec, root.path()).unwrap();
        assert_eq!(second.len(), 2);
        assert!(started.elapsed().as_secs_f64() < 2.0);
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.summary, b.summary);
        }
    }
}
