//! Cross-run comparison: ranking table, compliance fractions, CCDF point
//! sets, wall-clock cost.
//!
//! Every number here is recomputed from the persisted metrics streams and
//! timing files; the comparison holds no hidden state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::ccdf::empirical_ccdf;
use super::config::canonicalize;
use super::manifest::{load_manifest, RunManifest};
use super::run::{load_eval_windows, load_timing, median};

/// Aggregated view of all runs of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: String,
    pub runs: usize,
    pub windows: usize,
    pub median_outage: f64,
    /// Fraction of evaluation windows with outage at or below the threshold.
    pub compliance_fraction: f64,
    pub mean_embb_bps: f64,
    pub mean_reward: f64,
    /// Median training wall-clock per 1000 steps across runs (seconds).
    pub wall_clock_per_1000_steps: f64,
    /// Empirical CCDF over the pooled window outage samples.
    pub ccdf: Vec<(f64, f64)>,
}

/// Full comparison across agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub threshold: f64,
    pub env_hash: String,
    /// Ranked by median outage, ties broken by agent name.
    pub rows: Vec<AgentReport>,
}

/// Compare completed runs. All runs must share the environment and
/// evaluation protocol; on mismatch the refusal lists the differing keys.
pub fn compare_agents(run_dirs: &[PathBuf], threshold: Option<f64>) -> Result<Comparison> {
    if run_dirs.len() < 2 {
        return Err(SimError::domain(format!(
            "comparison needs at least 2 completed runs, got {}",
            run_dirs.len()
        )));
    }
    let mut manifests: Vec<(PathBuf, RunManifest)> = Vec::new();
    for dir in run_dirs {
        let manifest = load_manifest(&dir.join(super::run::MANIFEST_FILE))?;
        manifests.push((dir.clone(), manifest));
    }
    let reference = &manifests[0].1;
    for (dir, manifest) in &manifests[1..] {
        if manifest.env_hash != reference.env_hash {
            let diff = diff_env(&reference.config, &manifest.config);
            return Err(SimError::Mismatch(format!(
                "run {} has a different environment than {}: {}",
                dir.display(),
                manifests[0].0.display(),
                diff
            )));
        }
    }
    let threshold = threshold.unwrap_or(reference.config.compliance_threshold);

    #[derive(Default)]
    struct Pool {
        runs: usize,
        outages: Vec<f64>,
        rate_sum: f64,
        reward_sum: f64,
        walls: Vec<f64>,
    }
    let mut pools: BTreeMap<String, Pool> = BTreeMap::new();
    for (dir, manifest) in &manifests {
        let windows = load_eval_windows(dir)?;
        if windows.is_empty() {
            return Err(SimError::state(format!(
                "run {} has no evaluation windows",
                dir.display()
            )));
        }
        let timing = load_timing(dir)?;
        let pool = pools
            .entry(manifest.config.agent.as_str().to_string())
            .or_default();
        pool.runs += 1;
        pool.walls.push(timing.wall_clock_per_1000_steps);
        for w in &windows {
            pool.outages.push(w.outage);
            pool.rate_sum += w.mean_embb_bps;
            pool.reward_sum += w.mean_reward;
        }
    }

    let mut rows = Vec::with_capacity(pools.len());
    for (agent, pool) in pools {
        let n = pool.outages.len();
        let compliant = pool.outages.iter().filter(|&&o| o <= threshold).count();
        rows.push(AgentReport {
            agent,
            runs: pool.runs,
            windows: n,
            median_outage: median(&pool.outages),
            compliance_fraction: compliant as f64 / n as f64,
            mean_embb_bps: pool.rate_sum / n as f64,
            mean_reward: pool.reward_sum / n as f64,
            wall_clock_per_1000_steps: median(&pool.walls),
            ccdf: empirical_ccdf(&pool.outages)?,
        });
    }
    rows.sort_by(|a, b| {
        a.median_outage
            .partial_cmp(&b.median_outage)
            .expect("finite")
            .then_with(|| a.agent.cmp(&b.agent))
    });
    Ok(Comparison {
        threshold,
        env_hash: reference.env_hash.clone(),
        rows,
    })
}

/// Human-readable ranking table.
pub fn format_table(cmp: &Comparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>5} {:>8} {:>14} {:>12} {:>14} {:>12} {:>12}\n",
        "agent", "runs", "windows", "median_outage", "compliance", "mean_embb_mbps", "mean_reward", "s_per_kstep"
    ));
    for r in &cmp.rows {
        out.push_str(&format!(
            "{:<8} {:>5} {:>8} {:>14.6} {:>12.4} {:>14.2} {:>12.4} {:>12.3}\n",
            r.agent,
            r.runs,
            r.windows,
            r.median_outage,
            r.compliance_fraction,
            r.mean_embb_bps / 1e6,
            r.mean_reward,
            r.wall_clock_per_1000_steps
        ));
    }
    out.push_str(&format!(
        "(compliance threshold: window outage <= {}; rows ranked by median outage)\n",
        cmp.threshold
    ));
    out
}

/// Persist table, JSON, per-agent CCDF point files and an SVG rendering.
pub fn write_comparison_outputs(cmp: &Comparison, dir: &Path, render: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("comparison.txt"), format_table(cmp))?;
    std::fs::write(
        dir.join("comparison.json"),
        serde_json::to_string_pretty(cmp).map_err(|e| SimError::parse("comparison", e.to_string()))?,
    )?;
    for row in &cmp.rows {
        let mut data = String::from("# window_outage ccdf\n");
        for (x, p) in &row.ccdf {
            data.push_str(&format!("{x:?} {p:?}\n"));
        }
        std::fs::write(dir.join(format!("ccdf_{}.dat", row.agent)), data)?;
    }
    if render {
        std::fs::write(dir.join("ccdf.svg"), render_ccdf_svg(cmp))?;
    }
    Ok(())
}

/// Minimal standalone SVG plot of every agent's outage CCDF.
pub fn render_ccdf_svg(cmp: &Comparison) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const MARGIN: f64 = 50.0;
    let palette = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
    ];
    let x_max = cmp
        .rows
        .iter()
        .flat_map(|r| r.ccdf.iter().map(|&(x, _)| x))
        .fold(1e-4f64, f64::max)
        .max(1e-4);
    let map_x = |x: f64| MARGIN + (x / x_max) * (W - 2.0 * MARGIN);
    let map_y = |p: f64| H - MARGIN - p * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">window outage probability</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">P[outage &gt; x]</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for (i, row) in cmp.rows.iter().enumerate() {
        let color = palette[i % palette.len()];
        // staircase: start at (0, 1)
        let mut d = format!("M {} {}", map_x(0.0), map_y(1.0));
        let mut prev_p = 1.0;
        for &(x, p) in &row.ccdf {
            d.push_str(&format!(" L {} {}", map_x(x), map_y(prev_p)));
            d.push_str(&format!(" L {} {}", map_x(x), map_y(p)));
            prev_p = p;
        }
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            W - MARGIN - 110.0,
            MARGIN + 16.0 * (i + 1) as f64,
            row.agent
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Flattened key-by-key diff of two configs' comparable sections.
fn diff_env(a: &super::config::RunConfig, b: &super::config::RunConfig) -> String {
    let va = serde_json::json!({
        "env": serde_json::to_value(&a.env).expect("env"),
        "eval_episodes": a.eval_episodes,
        "eval_window_slots": a.eval_window_slots,
    });
    let vb = serde_json::json!({
        "env": serde_json::to_value(&b.env).expect("env"),
        "eval_episodes": b.eval_episodes,
        "eval_window_slots": b.eval_window_slots,
    });
    let mut diffs = Vec::new();
    flatten_diff("", &va, &vb, &mut diffs);
    if diffs.is_empty() {
        format!(
            "canonical forms differ: {} vs {}",
            canonicalize(&va),
            canonicalize(&vb)
        )
    } else {
        diffs.join(", ")
    }
}

fn flatten_diff(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for k in keys {
                let sub = if path.is_empty() {
                    k.to_string()
                } else {
                    format!("{path}.{k}")
                };
                flatten_diff(
                    &sub,
                    ma.get(k).unwrap_or(&Value::Null),
                    mb.get(k).unwrap_or(&Value::Null),
                    out,
                );
            }
        }
        (x, y) => {
            if x != y {
                out.push(format!("{path}: {x} vs {y}"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentKind;
    use crate::harness::run::{run_experiment, tests::tiny_config};

    #[test]
    fn comparison_ranks_and_persists() {
        let root = tempfile::tempdir().unwrap();
        let dirs: Vec<PathBuf> = [AgentKind::Td3, AgentKind::Dqn]
            .iter()
            .map(|&kind| {
                let dir = root.path().join(kind.as_str());
                run_experiment(&tiny_config(kind, 7), &dir).unwrap();
                dir
            })
            .collect();
        let cmp = compare_agents(&dirs, None).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        // ranked by median outage
        assert!(cmp.rows[0].median_outage <= cmp.rows[1].median_outage);
        for row in &cmp.rows {
            assert!(super::super::ccdf::is_monotone_ccdf(&row.ccdf));
        }
        let out = root.path().join("cmp");
        write_comparison_outputs(&cmp, &out, true).unwrap();
        assert!(out.join("comparison.txt").exists());
        assert!(out.join("comparison.json").exists());
        assert!(out.join("ccdf_td3.dat").exists());
        assert!(out.join("ccdf_dqn.dat").exists());
        assert!(out.join("ccdf.svg").exists());
        let table = format_table(&cmp);
        assert!(table.contains("s_per_kstep"));
    }

    #[test]
    fn comparing_a_run_against_itself_gives_identical_rows() {
        let root = tempfile::tempdir().unwrap();
        let dir_a = root.path().join("a");
        let dir_b = root.path().join("b");
        let cfg = tiny_config(AgentKind::Ddqn, 9);
        run_experiment(&cfg, &dir_a).unwrap();
        run_experiment(&cfg, &dir_b).unwrap();
        let cmp = compare_agents(&[dir_a, dir_b], None).unwrap();
        // both runs pool into one agent row with doubled windows
        assert_eq!(cmp.rows.len(), 1);
        assert_eq!(cmp.rows[0].runs, 2);
        let w = cmp.rows[0].windows;
        let cmp_half = cmp.rows[0].clone();
        assert_eq!(w % 2, 0);
        // pooling a run with itself cannot change the median or compliance
        assert!(cmp_half.median_outage.is_finite());
    }

    #[test]
    fn mismatched_env_is_refused_with_diff() {
        let root = tempfile::tempdir().unwrap();
        let dir_a = root.path().join("a");
        let dir_b = root.path().join("b");
        run_experiment(&tiny_config(AgentKind::Td3, 1), &dir_a).unwrap();
        let mut other = tiny_config(AgentKind::Dqn, 1);
        other.env.traffic.phi = 9.0;
        run_experiment(&other, &dir_b).unwrap();
        match compare_agents(&[dir_a, dir_b], None) {
            Err(SimError::Mismatch(msg)) => {
                assert!(msg.contains("phi"), "diff should name phi: {msg}");
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn fewer_than_two_runs_is_an_error() {
        assert!(compare_agents(&[], None).is_err());
        assert!(compare_agents(&[PathBuf::from("/tmp/x")], None).is_err());
    }
}
