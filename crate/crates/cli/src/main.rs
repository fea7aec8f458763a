use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coop_rl_cli::{
    eval, sweep, train, verify, EvalOptions, RunConfig, SweepAxis, SweepSpec, VerifyOptions,
};

#[derive(Parser)]
#[command(
    name = "coop-rl",
    version,
    about = "Cooperative dual-network Q-learning on cart-pole"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed or comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_parser = ["state", "pixels"])]
    obs: Option<String>,
    /// Any configuration key, e.g. `--set alpha=5e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(n) = self.episodes {
            cfg.set("episodes", &n.to_string())?;
        }
        if let Some(v) = &self.variant {
            cfg.set("variant", v)?;
        }
        if let Some(o) = &self.obs {
            cfg.set("obs", o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics and checkpoints.
    Train(Common),
    /// Train across values of one setting and aggregate the final rewards.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// buffer_size, exploration_rate or variant.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Check the cost-gap bound and the descent terms on random networks.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this perturbation in every trial.
        #[arg(long, allow_hyphen_values = true)]
        s: Option<f64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, hide = true)]
        corrupt_feedback: bool,
    },
    /// Greedy rollouts of a saved network.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ["state", "pixels"], default_value = "state")]
        obs: String,
        /// Configuration file, used for the pixel grid size.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV file for the first episode's trajectory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let report = train(&cfg)?;
            println!("{}", report.summary());
            for r in &report.runs {
                println!("metrics: {}", r.metrics_path.display());
            }
            Ok(report.all_ok())
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let cfg = common.resolve()?;
            let report = sweep(&cfg, &SweepSpec::new(axis, values)?)?;
            for row in &report.rows {
                println!(
                    "{}={} [{}]: {:.2}({:.4}) runs={} failures={}",
                    axis,
                    row.value,
                    row.label,
                    row.mean,
                    row.std,
                    row.runs,
                    row.failures.len()
                );
                for f in &row.failures {
                    eprintln!("  {f}");
                }
            }
            println!("aggregate: {}", report.aggregate_path.display());
            Ok(report.rows.iter().all(|r| r.failures.is_empty()))
        }
        Command::Verify {
            trials,
            seed,
            s,
            out,
            corrupt_feedback,
        } => {
            let report = verify(&VerifyOptions {
                trials,
                seed,
                s,
                corrupt_feedback,
                out_dir: out,
            })?;
            println!("{}", report.summary());
            println!("report: {}", report.report_path.display());
            let failures = report.failures();
            for f in failures.iter().take(20) {
                eprintln!("{f}");
            }
            if failures.len() > 20 {
                eprintln!("... and {} more failing trials", failures.len() - 20);
            }
            Ok(report.pass())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            obs,
            config,
            trajectory,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    RunConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?
                }
                None => RunConfig::default(),
            };
            cfg.set("obs", &obs)?;
            if episodes == 0 {
                bail!("episodes must be at least 1");
            }
            let report = eval(&EvalOptions {
                checkpoint,
                episodes,
                seed,
                obs_mode: cfg.agent.obs_mode,
                trajectory,
            })?;
            for (i, r) in report.rewards().iter().enumerate() {
                println!("episode {}: {r}", i + 1);
            }
            println!("{}", report.summary());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
