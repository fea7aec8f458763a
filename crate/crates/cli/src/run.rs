//! Seeded training runs and parameter sweeps.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coop_rl::agent::{trailing_stats, METRICS_HEADER};
use coop_rl::net::write_checkpoint;
use coop_rl::{run_training, AgentConfig, RunAborted, RunMetrics, RunOutput, Variant};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::CliError;

/// Thread pool sized by `COOP_RL_THREADS`, or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("COOP_RL_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!(
                "COOP_RL_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_metrics_csv(
    path: &Path,
    config_hash: &str,
    metrics: &[RunMetrics],
) -> Result<(), CliError> {
    let mut out = create(path)?;
    let mut body = format!("# config_hash={config_hash}\n{METRICS_HEADER}\n");
    for m in metrics {
        body.push_str(&m.csv_row());
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_net(path: &Path, net: &coop_rl::Network) -> Result<(), CliError> {
    let out = create(path)?;
    write_checkpoint(net, out).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// Table-style `mean(std)`.
pub fn table_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}({std:.4})")
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub config_hash: String,
    pub metrics_path: PathBuf,
    pub result: Result<RunOutput, RunAborted>,
}

impl SeedRun {
    pub fn metrics(&self) -> &[RunMetrics] {
        match &self.result {
            Ok(out) => &out.metrics,
            Err(e) => e.partial.as_ref().map_or(&[], |p| &p.metrics),
        }
    }

    /// Trailing-100 reward mean and std, if the run completed.
    pub fn trailing(&self) -> Option<(f64, f64)> {
        self.result.as_ref().ok().map(RunOutput::trailing_stats)
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub variant: Variant,
    pub runs: Vec<SeedRun>,
}

impl TrainReport {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }

    /// Per-seed lines followed by the pooled trailing-100 summary.
    pub fn summary(&self) -> String {
        let mut lines = Vec::new();
        let mut pooled = Vec::new();
        for run in &self.runs {
            match &run.result {
                Ok(out) => {
                    let (m, s) = out.trailing_stats();
                    let tail = &out.metrics[out.metrics.len().saturating_sub(100)..];
                    pooled.extend(tail.iter().map(|r| r.reward));
                    lines.push(format!(
                        "{} seed {}: {} q_gap {:.4} -> {:.4}",
                        self.variant,
                        run.seed,
                        table_cell(m, s),
                        out.initial_q_gap,
                        out.final_q_gap()
                    ));
                }
                Err(e) => lines.push(format!("{} seed {}: FAILED ({e})", self.variant, run.seed)),
            }
        }
        let (m, s) = mean_std(&pooled);
        lines.push(format!("{}: {}", self.variant, table_cell(m, s)));
        lines.join("\n")
    }
}

fn run_one(
    cfg: &RunConfig,
    agent: AgentConfig,
    metrics_path: PathBuf,
    ckpt_prefix: Option<PathBuf>,
) -> Result<SeedRun, CliError> {
    let seed = agent.seed;
    let mut hashed = cfg.clone();
    hashed.agent = agent.clone();
    let config_hash = hashed.hash_for(seed);
    let result = run_training(&agent);
    let metrics: &[RunMetrics] = match &result {
        Ok(out) => &out.metrics,
        Err(e) => e.partial.as_ref().map_or(&[], |p| &p.metrics),
    };
    write_metrics_csv(&metrics_path, &config_hash, metrics)?;
    if let (Ok(out), Some(prefix)) = (&result, ckpt_prefix) {
        write_net(
            &prefix.with_file_name(format!("{}_q1.weights", file_name(&prefix))),
            &out.q1,
        )?;
        write_net(
            &prefix.with_file_name(format!("{}_q2.weights", file_name(&prefix))),
            &out.q2,
        )?;
    }
    Ok(SeedRun {
        seed,
        config_hash,
        metrics_path,
        result,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Trains one agent per seed, writing `<variant>_seed<N>.csv` and the two
/// network checkpoints per seed into the output directory.
pub fn train(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let resolved = cfg.out_dir.join("config.resolved");
    fs::write(&resolved, cfg.canonical()).map_err(|e| CliError::io(&resolved, e))?;
    let variant = cfg.agent.variant;
    let runs = worker_pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let stem = cfg.out_dir.join(format!("{variant}_seed{seed}"));
                run_one(
                    cfg,
                    cfg.agent_for(seed),
                    stem.with_extension("csv"),
                    Some(stem),
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(TrainReport { variant, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BufferSize,
    ExplorationRate,
    Variant,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::BufferSize => "buffer_size",
            SweepAxis::ExplorationRate => "exploration_rate",
            SweepAxis::Variant => "variant",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "buffer_size" => Ok(SweepAxis::BufferSize),
            "exploration_rate" => Ok(SweepAxis::ExplorationRate),
            "variant" => Ok(SweepAxis::Variant),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected buffer_size, exploration_rate or variant)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<String>) -> Result<Self, CliError> {
        if values.is_empty() {
            return Err(CliError::Usage("a sweep needs at least one value".into()));
        }
        Ok(Self { axis, values })
    }

    fn config_key(&self) -> &'static str {
        match self.axis {
            SweepAxis::BufferSize => "buffer_size",
            SweepAxis::ExplorationRate => "s0",
            SweepAxis::Variant => "variant",
        }
    }

    /// Base configuration with the axis set to `value`.
    pub fn point(&self, base: &RunConfig, value: &str) -> Result<RunConfig, CliError> {
        let mut cfg = base.clone();
        cfg.set(self.config_key(), value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Row label; a zero exploration rate on coop removes the perturbation,
    /// which leaves gradient coop.
    pub fn label(&self, point: &RunConfig) -> String {
        let v = point.agent.variant;
        if self.axis == SweepAxis::ExplorationRate && v == Variant::Coop && point.agent.s0 == 0.0 {
            "g-coop-equivalent".into()
        } else {
            v.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failures: Vec<String>,
}

pub const SWEEP_HEADER: &str = "axis_value,label,mean_reward,std_reward,runs,failures";

#[derive(Debug)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(String, SeedRun)>,
    pub aggregate_path: PathBuf,
}

/// Runs every (value, seed) pair. Failed runs are recorded on their row and
/// do not stop the sweep; each row aggregates the trailing-100 means of the
/// completed runs (mean and population std across seeds).
pub fn sweep(base: &RunConfig, spec: &SweepSpec) -> Result<SweepReport, CliError> {
    base.validate()?;
    let points: Vec<(String, RunConfig)> = spec
        .values
        .iter()
        .map(|v| spec.point(base, v).map(|p| (v.clone(), p)))
        .collect::<Result<_, _>>()?;
    let dir = base.out_dir.join(format!("sweep_{}", spec.axis));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| base.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs = worker_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(p, seed)| {
                let (value, cfg) = &points[p];
                let path = dir.join(format!("{value}_seed{seed}.csv"));
                run_one(cfg, cfg.agent_for(seed), path, None).map(|r| (value.clone(), r))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut rows = Vec::with_capacity(points.len());
    for (value, cfg) in &points {
        let mut means = Vec::new();
        let mut failures = Vec::new();
        for (_, run) in runs.iter().filter(|(v, _)| v == value) {
            match &run.result {
                Ok(out) => means.push(trailing_stats(&out.metrics).0),
                Err(e) => failures.push(format!("seed {}: {e}", run.seed)),
            }
        }
        let (mean, std) = mean_std(&means);
        rows.push(SweepRow {
            value: value.clone(),
            label: spec.label(cfg),
            mean,
            std,
            runs: means.len() + failures.len(),
            failures,
        });
    }

    let aggregate_path = base.out_dir.join(format!("sweep_{}.csv", spec.axis));
    let mut h = Sha256::new();
    h.update(base.hash_for(0));
    h.update(format!(
        "axis = {}\nvalues = {}\nseeds = {:?}\n",
        spec.axis,
        spec.values.join(","),
        base.seeds
    ));
    let mut body = format!("# config_hash={}\n{SWEEP_HEADER}\n", hex(&h.finalize()));
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value,
            r.label,
            r.mean,
            r.std,
            r.runs,
            r.failures.len()
        ));
    }
    fs::write(&aggregate_path, body).map_err(|e| CliError::io(&aggregate_path, e))?;

    Ok(SweepReport {
        spec: spec.clone(),
        rows,
        runs,
        aggregate_path,
    })
}
