//! Command-line front end: run experiments, sweep configurations, compare
//! completed runs, and execute the invariant self-test suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oransim::agents::AgentKind;
use oransim::harness::{
    compare_agents, format_table, run_experiment, run_selftest, run_sweep, write_comparison_outputs,
    RunConfig, SweepSpec,
};

/// Multi-cell eMBB/URLLC coexistence simulator and DRL benchmark harness.
#[derive(Parser)]
#[command(name = "oransim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one agent from a config.
    Run(RunArgs),
    /// Cartesian sweep over agents, arrival rates and seeds.
    Sweep(SweepArgs),
    /// Rank completed runs and emit CCDF data.
    Compare(CompareArgs),
    /// Run the invariant and property self-test suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// TOML config file; omitted keys use per-agent defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Agent: dqn | ddqn | ddpg | pgac | td3 | td3-ts.
    #[arg(long)]
    agent: Option<AgentKind>,
    /// URLLC arrival rate in packets/slot (overrides the config file).
    #[arg(long)]
    phi: Option<f64>,
    /// Number of cells / acting agents.
    #[arg(long)]
    cells: Option<usize>,
    /// Training steps (slots).
    #[arg(long)]
    train_steps: Option<u64>,
}

impl CommonConfig {
    fn resolve(&self) -> oransim::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path, self.agent)?,
            None => RunConfig::defaults_for(self.agent.unwrap_or(AgentKind::Td3)),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(phi) = self.phi {
            cfg.env.traffic.phi = phi;
        }
        if let Some(cells) = self.cells {
            cfg.env.cells = cells;
        }
        if let Some(steps) = self.train_steps {
            cfg.train_steps = steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Output directory for the run artifacts.
    #[arg(long, default_value = "runs/run")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Comma-separated agents (default: all six).
    #[arg(long, value_delimiter = ',')]
    agents: Vec<AgentKind>,
    /// Comma-separated arrival rates.
    #[arg(long, value_delimiter = ',')]
    phis: Vec<f64>,
    /// Number of seeds, counted up from the base seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Output root; one subdirectory per run.
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
    /// Parallel worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Completed run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for table, JSON and CCDF data.
    #[arg(long, default_value = "runs/comparison")]
    out: PathBuf,
    /// Override the compliance threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also render an SVG plot of the CCDFs.
    #[arg(long)]
    render: bool,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 12345)]
    seed: u64,
}

/// Resolve a path under the output root override, if one is set.
fn rooted(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("ORANSIM_OUT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> oransim::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.common.resolve()?;
            let out = rooted(&args.out);
            let result = run_experiment(&cfg, &out)?;
            println!(
                "run complete: {} seed {} -> {}",
                result.summary.agent,
                result.summary.seed,
                out.display()
            );
            println!(
                "  eval windows {}  median outage {:.6}  compliance {:.4}  mean eMBB {:.2} Mbps",
                result.summary.eval_windows,
                result.summary.median_outage,
                result.summary.compliance_fraction,
                result.summary.mean_embb_bps / 1e6
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            let base = args.common.resolve()?;
            let agents = if args.agents.is_empty() {
                AgentKind::ALL.to_vec()
            } else {
                args.agents.clone()
            };
            let phis = if args.phis.is_empty() {
                vec![base.env.traffic.phi]
            } else {
                args.phis.clone()
            };
            let base_seed = base.seed;
            let spec = SweepSpec {
                base,
                agents,
                phis,
                seeds: (base_seed..base_seed + args.seeds).collect(),
                jobs: args.jobs,
            };
            let out = rooted(&args.out);
            let outputs = run_sweep(&spec, &out)?;
            println!("sweep complete: {} runs under {}", outputs.len(), out.display());
            for o in &outputs {
                println!(
                    "  {:<28} median outage {:.6}  compliance {:.4}",
                    o.dir.file_name().and_then(|n| n.to_str()).unwrap_or("?"),
                    o.summary.median_outage,
                    o.summary.compliance_fraction
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let runs: Vec<PathBuf> = args.runs.iter().map(|p| rooted(p)).collect();
            let cmp = compare_agents(&runs, args.threshold)?;
            let out = rooted(&args.out);
            write_comparison_outputs(&cmp, &out, args.render)?;
            print!("{}", format_table(&cmp));
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest(args) => {
            let results = run_selftest(args.seed);
            let mut all_passed = true;
            for r in &results {
                println!(
                    "SELFTEST {:<20} {}  ({})",
                    r.name,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.details
                );
                all_passed &= r.passed;
            }
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
