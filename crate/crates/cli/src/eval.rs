//! Greedy rollouts of a saved network.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use coop_rl::env::write_trajectory_csv;
use coop_rl::net::read_checkpoint;
use coop_rl::{greedy_rollouts, ObsMode, Rollout};

use crate::run::table_cell;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    pub obs_mode: ObsMode,
    /// Write the first episode's trajectory here.
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug)]
pub struct EvalReport {
    pub rollouts: Vec<Rollout>,
}

impl EvalReport {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn summary(&self) -> String {
        let r = self.rewards();
        let n = r.len().max(1) as f64;
        let mean = r.iter().sum::<f64>() / n;
        let std = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        format!(
            "greedy over {} episodes: {}",
            r.len(),
            table_cell(mean, std)
        )
    }
}

pub fn eval(opts: &EvalOptions) -> Result<EvalReport, CliError> {
    let file = File::open(&opts.checkpoint).map_err(|e| CliError::io(&opts.checkpoint, e))?;
    let net = read_checkpoint(BufReader::new(file))
        .map_err(|e| CliError::Other(format!("{}: {e}", opts.checkpoint.display())))?;
    if net.input_dim() != opts.obs_mode.obs_len() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} inputs but the observation mode yields {}",
            net.input_dim(),
            opts.obs_mode.obs_len()
        )));
    }
    let rollouts = greedy_rollouts(&net, opts.obs_mode, opts.episodes, opts.seed)?;
    if let (Some(path), Some(first)) = (&opts.trajectory, rollouts.first()) {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_trajectory_csv(&first.trajectory, file).map_err(|e| CliError::io(path, e))?;
    }
    Ok(EvalReport { rollouts })
}
