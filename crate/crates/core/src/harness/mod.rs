//! Experiment harness: configuration, runner, metrics persistence, CCDF
//! computation, agent comparison, sweeps and the self-test suite.

pub mod ccdf;
pub mod compare;
pub mod config;
pub mod manifest;
pub mod metrics;
pub mod run;
pub mod selftest;
pub mod sweep;

pub use ccdf::{ccdf_at, empirical_ccdf, is_monotone_ccdf, outage_probability};
pub use compare::{compare_agents, format_table, write_comparison_outputs, AgentReport, Comparison};
pub use config::RunConfig;
pub use manifest::{load_manifest, write_manifest, RunManifest};
pub use metrics::{MetricRecord, Phase, WindowRecord};
pub use run::{
    existing_run_matches, load_eval_windows, median, run_experiment, RunOutput, RunSummary,
    RunTiming,
};
pub use selftest::{run_selftest, CheckResult};
pub use sweep::{run_sweep, SweepSpec};
