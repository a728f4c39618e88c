//! One experiment: build everything from a config, train, evaluate, persist.
//!
//! Run directory layout:
//!
//! - `manifest.json` — full resolved config + provenance (written first)
//! - `metrics.ndjson` — training windows, federation events, then one record
//!   per evaluation window; byte-identical across reruns of the same config
//! - `checkpoint.txt` — final parameters as a text tensor archive
//! - `timing.json` — wall-clock measurements (kept out of the metrics stream)
//! - `summary.json` — aggregate evaluation statistics

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::build_agent;
use crate::env::RrmEnv;
use crate::error::{Result, SimError};
use crate::federation::{evaluate_policy, FedEvent, FederatedTrainer};
use crate::rng::derive_seed;

use super::config::RunConfig;
use super::manifest::write_manifest;
use super::metrics::{EvalWindows, MetricRecord, MetricsWriter, Phase, TrainWindows, WindowRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TIMING_FILE: &str = "timing.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Wall-clock measurements; deliberately outside the metrics stream so that
/// stream stays byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub wall_clock_per_1000_steps: f64,
}

/// Aggregate result of one run's evaluation phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub seed: u64,
    pub phi: f64,
    pub cells: usize,
    pub train_steps: u64,
    pub eval_episodes: u64,
    pub config_hash: String,
    pub env_hash: String,
    pub eval_windows: u64,
    pub median_outage: f64,
    pub compliance_threshold: f64,
    pub compliance_fraction: f64,
    pub mean_embb_bps: f64,
    pub mean_reward: f64,
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub timing: RunTiming,
}

/// Median of a sample set (mean of the middle pair for even sizes).
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// True when `dir` already holds a completed run of exactly this config.
pub fn existing_run_matches(dir: &Path, config: &RunConfig) -> bool {
    let summary_path = dir.join(SUMMARY_FILE);
    let Ok(text) = std::fs::read_to_string(&summary_path) else {
        return false;
    };
    let Ok(summary) = serde_json::from_str::<RunSummary>(&text) else {
        return false;
    };
    summary.completed && summary.config_hash == config.config_hash()
}

pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(dir.join(SUMMARY_FILE))?;
    serde_json::from_str(&text)
        .map_err(|e| SimError::parse(dir.join(SUMMARY_FILE).display().to_string(), e.to_string()))
}

pub fn load_timing(dir: &Path) -> Result<RunTiming> {
    let text = std::fs::read_to_string(dir.join(TIMING_FILE))?;
    serde_json::from_str(&text)
        .map_err(|e| SimError::parse(dir.join(TIMING_FILE).display().to_string(), e.to_string()))
}

/// Train + evaluate one configuration, persisting all artifacts to `dir`.
pub fn run_experiment(config: &RunConfig, dir: &Path) -> Result<RunOutput> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    let manifest = write_manifest(config, &dir.join(MANIFEST_FILE))?;

    let metrics_file = File::create(dir.join(METRICS_FILE))?;
    let mut metrics = MetricsWriter::new(BufWriter::new(metrics_file));

    let mut env = RrmEnv::new(config.env.clone())?;
    let learner = build_agent(
        config.agent,
        &config.hyper,
        config.train_steps,
        derive_seed(config.seed, "learner"),
    )?;
    let mut trainer = FederatedTrainer::new(learner, config.env.cells, config.sync, config.seed);

    // Training phase.
    let train_started = Instant::now();
    let train_windows = std::cell::RefCell::new(TrainWindows::new(
        config.env.cells,
        config.train_window_slots,
    ));
    let mut pending_events: Vec<FedEvent> = Vec::new();
    {
        let events = &mut pending_events;
        trainer.train(
            &mut env,
            config.train_steps,
            config.seed,
            |step, result| train_windows.borrow_mut().on_slot(step, result),
            |event| {
                if let FedEvent::RoundCompleted {
                    updates,
                    mean_critic_loss,
                    mean_actor_loss,
                    step,
                } = &event
                {
                    if !mean_critic_loss.is_finite()
                        || mean_actor_loss.map_or(false, |l| !l.is_finite())
                    {
                        return Err(SimError::state(format!(
                            "non-finite loss at step {step}: critic {mean_critic_loss}, actor {mean_actor_loss:?}"
                        )));
                    }
                    train_windows
                        .borrow_mut()
                        .on_round(*mean_critic_loss, *mean_actor_loss, *updates);
                }
                events.push(event);
                Ok(())
            },
        )
    }
    .map_err(|e| {
        // Diagnostic dump for aborted runs.
        let _ = std::fs::write(
            dir.join("abort.json"),
            serde_json::json!({
                "error": e.to_string(),
                "agent": config.agent.as_str(),
                "seed": config.seed,
            })
            .to_string(),
        );
        e
    })?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    for record in train_windows.into_inner().finish() {
        metrics.write(&MetricRecord::Window(record))?;
    }
    for event in pending_events {
        metrics.write(&MetricRecord::Event(event))?;
    }

    // Evaluation phase: exploration off, fresh episode seeds.
    let eval_started = Instant::now();
    let mut eval_windows = EvalWindows::new(config.env.cells, config.eval_window_slots);
    evaluate_policy(
        trainer.learner.as_ref(),
        &mut env,
        config.eval_episodes,
        derive_seed(config.seed, "eval"),
        |episode, slot, result| eval_windows.on_slot(episode, slot, result),
    )?;
    let eval_seconds = eval_started.elapsed().as_secs_f64();

    let eval_records = eval_windows.finish();
    for record in &eval_records {
        metrics.write(&MetricRecord::Window(record.clone()))?;
    }
    metrics.flush()?;

    // Final parameters.
    let mut ckpt = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
    trainer.learner.write_checkpoint(&mut ckpt)?;
    ckpt.flush()?;

    let summary = summarize(config, &manifest.config_hash, &manifest.env_hash, &eval_records);
    std::fs::write(
        dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary).map_err(|e| SimError::parse("summary", e.to_string()))?,
    )?;

    let timing = RunTiming {
        train_seconds,
        eval_seconds,
        wall_clock_per_1000_steps: if config.train_steps == 0 {
            0.0
        } else {
            train_seconds * 1000.0 / config.train_steps as f64
        },
    };
    std::fs::write(
        dir.join(TIMING_FILE),
        serde_json::to_string_pretty(&timing).map_err(|e| SimError::parse("timing", e.to_string()))?,
    )?;

    log::info!(
        "run {} seed {} done: median outage {:.4}, compliance {:.3}",
        summary.agent,
        summary.seed,
        summary.median_outage,
        summary.compliance_fraction
    );
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        summary,
        timing,
    })
}

fn summarize(
    config: &RunConfig,
    config_hash: &str,
    env_hash: &str,
    eval_records: &[WindowRecord],
) -> RunSummary {
    let outages: Vec<f64> = eval_records.iter().map(|r| r.outage).collect();
    let compliant = eval_records
        .iter()
        .filter(|r| r.outage <= config.compliance_threshold)
        .count();
    let n = eval_records.len().max(1);
    RunSummary {
        agent: config.agent.as_str().to_string(),
        seed: config.seed,
        phi: config.env.traffic.phi,
        cells: config.env.cells,
        train_steps: config.train_steps,
        eval_episodes: config.eval_episodes,
        config_hash: config_hash.to_string(),
        env_hash: env_hash.to_string(),
        eval_windows: eval_records.len() as u64,
        median_outage: if outages.is_empty() { 0.0 } else { median(&outages) },
        compliance_threshold: config.compliance_threshold,
        compliance_fraction: compliant as f64 / n as f64,
        mean_embb_bps: eval_records.iter().map(|r| r.mean_embb_bps).sum::<f64>() / n as f64,
        mean_reward: eval_records.iter().map(|r| r.mean_reward).sum::<f64>() / n as f64,
        completed: true,
    }
}

/// Read back the evaluation windows of a completed run.
pub fn load_eval_windows(dir: &Path) -> Result<Vec<WindowRecord>> {
    let file = File::open(dir.join(METRICS_FILE))?;
    let records = super::metrics::read_metrics(file)?;
    Ok(records
        .into_iter()
        .filter_map(|r| match r {
            MetricRecord::Window(w) if w.phase == Phase::Eval => Some(w),
            _ => None,
        })
        .collect())
}
