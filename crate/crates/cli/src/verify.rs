//! Numerical checks of the cost-gap bound and the one-step descent terms.

use std::fs;
use std::path::PathBuf;

use coop_rl::theory::{
    prop1_gap_check, summary_line, thm1_descent_check, write_report_csv, DescentSummary,
    FeedbackSource, GapReport, SDraw, VerifyConfig,
};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

/// Spread of the perturbation used for the mean-gap comparison.
pub const MEAN_GAP_S_STD: f64 = 0.1;
/// Largest accepted ratio of mean gap to mean worst-case bound.
pub const MEAN_GAP_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Fixed perturbation for every trial instead of the default draws.
    pub s: Option<f64>,
    pub corrupt_feedback: bool,
    pub out_dir: PathBuf,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            s: None,
            corrupt_feedback: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl VerifyOptions {
    pub fn config(&self) -> VerifyConfig {
        let defaults = VerifyConfig::default();
        VerifyConfig {
            trials: self.trials,
            seed: self.seed,
            gap_s: self.s.map_or(defaults.gap_s, SDraw::Fixed),
            descent_s: self.s.map_or(defaults.descent_s, SDraw::Fixed),
            feedback_source: if self.corrupt_feedback {
                FeedbackSource::SkipSvd
            } else {
                FeedbackSource::Svd
            },
            ..defaults
        }
    }

    fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.config()));
        hex(&h.finalize())
    }
}

#[derive(Debug)]
pub struct VerifyReport {
    pub gap: GapReport,
    pub descent: DescentSummary,
    /// Gap check repeated with `s ~ N(0, 0.1²)` to compare the typical gap
    /// with the worst-case bound.
    pub mean_gap: GapReport,
    pub report_path: PathBuf,
}

impl VerifyReport {
    pub fn mean_gap_ratio(&self) -> f64 {
        if self.mean_gap.mean_bound == 0.0 {
            0.0
        } else {
            self.mean_gap.mean_gap / self.mean_gap.mean_bound
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.gap.trials.iter().map(|t| t.gap).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.gap.pass()
            && self.descent.pass()
            && self.mean_gap.pass()
            && self.mean_gap_ratio() <= MEAN_GAP_RATIO
    }

    pub fn summary(&self) -> String {
        format!(
            "{}\n# max_gap={:e} mean_gap_ratio={:.4} (limit {MEAN_GAP_RATIO}) overall={}",
            summary_line(&self.gap, &self.descent),
            self.max_gap(),
            self.mean_gap_ratio(),
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }

    /// One line per failing trial.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &i in &self.gap.violations {
            let t = &self.gap.trials[i];
            out.push(format!(
                "gap trial {i}: s={} eps={} gap={:e} bound={:e} spectrum_ok={}",
                t.s, t.eps, t.gap, t.bound, t.spectrum_ok
            ));
        }
        for &i in &self.mean_gap.violations {
            let t = &self.mean_gap.trials[i];
            out.push(format!(
                "mean-gap trial {i}: s={} gap={:e} bound={:e} spectrum_ok={}",
                t.s, t.gap, t.bound, t.spectrum_ok
            ));
        }
        for &i in &self.descent.negative_terms {
            let t = &self.descent.trials[i];
            out.push(format!(
                "descent trial {i}: s={} v1={:?} v2={:?} v3={:?}",
                t.s, t.v1, t.v2, t.v3
            ));
        }
        out
    }
}

pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    if opts.trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let cfg = opts.config();
    let gap = prop1_gap_check(&cfg)?;
    let descent = thm1_descent_check(&cfg)?;
    let mean_cfg = VerifyConfig {
        gap_s: opts.s.map_or(SDraw::Normal(MEAN_GAP_S_STD), SDraw::Fixed),
        seed: cfg.seed.wrapping_add(1),
        ..cfg
    };
    let mean_gap = prop1_gap_check(&mean_cfg)?;

    fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::io(&opts.out_dir, e))?;
    let report_path = opts.out_dir.join("verify_report.csv");
    let mut body = format!("# config_hash={}\n", opts.hash()).into_bytes();
    write_report_csv(&gap, &descent, &mut body).map_err(|e| CliError::io(&report_path, e))?;
    let report = VerifyReport {
        gap,
        descent,
        mean_gap,
        report_path,
    };
    body.extend_from_slice(
        report
            .summary()
            .lines()
            .last()
            .unwrap_or_default()
            .as_bytes(),
    );
    body.push(b'\n');
    fs::write(&report.report_path, body).map_err(|e| CliError::io(&report.report_path, e))?;
    Ok(report)
}
