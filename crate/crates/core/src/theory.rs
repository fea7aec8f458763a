//! Numerical checks of the EDL cost-gap bound and the one-step descent
//! decomposition on small random tanh networks.
//!
//! Targets are synthesized from a frozen reference network, so the
//! approximation residual `ξ` is zero and every inequality is tested in its
//! sharpest form. `P` is the identity and `R(W) = ½‖W‖²_F`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::{outer, svd, Matrix};
use crate::net::{
    feedback_matrix, lambda_signed, masked_error, mlp_specs, Activation, NetError, Network,
};

/// Constants entering the gap bound, as measured for one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    /// Largest layer Frobenius norm.
    pub w_bound: f64,
    /// Largest squared norm a layer input can reach (bias entry included).
    pub eta: f64,
    /// Cost bound.
    pub l_cost: f64,
    /// Gradient bound.
    pub m_grad: f64,
    /// Parameter-space bound.
    pub theta_bound: f64,
    /// Approximation residual.
    pub xi: f64,
}

impl TheoryBounds {
    /// `w_bound` and `eta` for `net` given inputs in `[−1, 1]`. With tanh
    /// hidden units every layer input satisfies `‖a‖² ≤ width + 1`.
    pub fn for_network(net: &Network) -> Self {
        let eta = net
            .layers()
            .iter()
            .map(|l| (l.in_dim() + 1) as f64)
            .fold(0.0, f64::max);
        let theta_bound = net
            .layers()
            .iter()
            .map(|l| l.weights.frobenius().powi(2))
            .sum::<f64>()
            .sqrt();
        Self {
            w_bound: net.max_layer_norm(),
            eta,
            l_cost: 0.0,
            m_grad: 0.0,
            theta_bound,
            xi: 0.0,
        }
    }
}

/// One input, the action whose Q-value is regressed, and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// How the feedback matrices are formed. `SkipSvd` replaces the polar
/// factor `U Vᵀ` by an all-ones block and exists to exercise the checks.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackSource {
    #[default]
    Svd,
    SkipSvd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SDraw {
    Fixed(f64),
    Uniform(f64, f64),
    Normal(f64),
}

impl SDraw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SDraw::Fixed(s) => s,
            SDraw::Uniform(lo, hi) => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            SDraw::Normal(sd) => {
                if sd == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, sd).expect("valid sd").sample(rng)
                }
            }
        }
    }
}

/// Per-layer quantities shared by both checks.
struct LayerTerms {
    delta: Vec<Matrix>,
    sigma: Vec<Matrix>,
    /// `outer(a_i, U Vᵀ e)`: the direction the perturbation adds.
    polar: Vec<Matrix>,
    spectrum_ok: bool,
    eps: f64,
}

fn layer_terms(
    net: &Network,
    sample: &Sample,
    s: f64,
    source: FeedbackSource,
) -> Result<LayerTerms, NetError> {
    let (q, cache) = net.forward(&sample.x)?;
    let eps = sample.target - q[sample.action];
    let e_out = masked_error(net.output_dim(), sample.action, -eps);
    let ts = net.transfer_matrices(&cache)?;
    let mut out = LayerTerms {
        delta: Vec::with_capacity(ts.len()),
        sigma: Vec::with_capacity(ts.len()),
        polar: Vec::with_capacity(ts.len()),
        spectrum_ok: true,
        eps,
    };
    for (i, t) in ts.iter().enumerate() {
        let fb = match source {
            FeedbackSource::Svd => feedback_matrix(t, s)?,
            FeedbackSource::SkipSvd => {
                let mut fb = feedback_matrix(t, 0.0)?;
                let ones = Matrix::from_vec(t.rows(), t.cols(), vec![1.0; t.rows() * t.cols()])?;
                fb.b = t.add(&ones.scale(s)?)?;
                fb.s_used = s;
                fb
            }
        };
        // the feedback must shift every singular value of T by s
        let mut expect: Vec<f64> = fb.svd.sigma.iter().map(|v| (v + s).abs()).collect();
        expect.sort_by(|a, b| b.total_cmp(a));
        let got = svd(&fb.b)?.sigma;
        let tol = 1e-8 * t.frobenius().max(1.0);
        if got.iter().zip(&expect).any(|(g, e)| (g - e).abs() > tol) {
            out.spectrum_ok = false;
        }
        out.delta.push(net.backprop_delta(&cache, &e_out, i)?);
        out.sigma.push(net.edl_feedback(&cache, &e_out, &fb, i)?);
        let polar_dir = fb.svd.polar().matvec(&e_out)?;
        out.polar.push(outer(&cache.a[i], &polar_dir)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTrial {
    pub s: f64,
    pub eps: f64,
    pub gap: f64,
    pub bound: f64,
    /// Gap measured at `s = 0`, the observable residual.
    pub xi: f64,
    pub spectrum_ok: bool,
    pub holds: bool,
}

/// `H` (layer-wise trace form with the true gradient) against `𝓗` (with
/// the EDL feedback), and the bound `d·|s|/2·|ε|·W_B·√η + ξ`.
pub fn prop1_gap(
    net: &Network,
    sample: &Sample,
    s: f64,
    c: f64,
    source: FeedbackSource,
) -> Result<GapTrial, NetError> {
    let costs = |terms: &LayerTerms| -> Result<(f64, f64), NetError> {
        let mut h = 0.0;
        let mut h_edl = 0.0;
        for (i, layer) in net.layers().iter().enumerate() {
            let w = &layer.weights;
            let lambda = lambda_signed(&terms.delta[i], w, c)?;
            let reg = lambda * 0.5 * w.frobenius().powi(2);
            h += 0.5 * (terms.delta[i].dot(w)? + reg);
            h_edl += 0.5 * (terms.sigma[i].dot(w)? + reg);
        }
        Ok((h, h_edl))
    };
    let terms = layer_terms(net, sample, s, source)?;
    let (h, h_edl) = costs(&terms)?;
    let base = layer_terms(net, sample, 0.0, source)?;
    let (h0, h0_edl) = costs(&base)?;
    let xi = (h0 - h0_edl).abs();

    let b = TheoryBounds::for_network(net);
    let gap = (h - h_edl).abs();
    let bound =
        net.depth() as f64 * s.abs() / 2.0 * terms.eps.abs() * b.w_bound * b.eta.sqrt() + xi;
    Ok(GapTrial {
        s,
        eps: terms.eps,
        gap,
        bound,
        xi,
        spectrum_ok: terms.spectrum_ok,
        holds: gap <= bound * (1.0 + 1e-12) + 1e-15 && terms.spectrum_ok,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub s: f64,
    pub eps: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub v3: Vec<f64>,
    /// `−α Σ (V1 + V2 + V3)`.
    pub predicted: f64,
    /// `J_E(θ − αΔ) − J_E(θ)`.
    pub measured: f64,
    pub terms_nonneg: bool,
    pub descended: bool,
}

impl DescentReport {
    pub fn total(&self) -> f64 {
        self.v1.iter().chain(&self.v2).chain(&self.v3).sum()
    }
}

/// One EDL step with perturbation `s` and signed regularization `c`,
/// decomposed into the three inner-product terms.
pub fn thm1_descent(
    net: &Network,
    sample: &Sample,
    alpha: f64,
    c: f64,
    s: f64,
    source: FeedbackSource,
) -> Result<DescentReport, NetError> {
    let terms = layer_terms(net, sample, s, source)?;
    let d = net.depth();
    let (mut v1, mut v2, mut v3) = (
        Vec::with_capacity(d),
        Vec::with_capacity(d),
        Vec::with_capacity(d),
    );
    let mut stepped = net.clone();
    for (i, layer) in net.layers().iter().enumerate() {
        let w = &layer.weights;
        let delta = &terms.delta[i];
        let lambda = lambda_signed(delta, w, c)?;
        v1.push(delta.dot(delta)?);
        v2.push(s * delta.dot(&terms.polar[i])?);
        v3.push(lambda * delta.dot(w)?);
        let dst = stepped.weights_mut(i).as_mut_slice();
        for ((wv, sv), w0) in dst
            .iter_mut()
            .zip(terms.sigma[i].as_slice())
            .zip(w.as_slice())
        {
            *wv -= alpha * (sv + lambda * w0);
        }
    }
    let before = net.sample_cost(&sample.x, sample.action, sample.target)?;
    let after = stepped.sample_cost(&sample.x, sample.action, sample.target)?;
    let scale = 1e-12 * (1.0 + v1.iter().sum::<f64>());
    let terms_nonneg = v1.iter().chain(&v2).chain(&v3).all(|&v| v >= -scale);
    let predicted =
        -alpha * (v1.iter().sum::<f64>() + v2.iter().sum::<f64>() + v3.iter().sum::<f64>());
    Ok(DescentReport {
        s,
        eps: terms.eps,
        v1,
        v2,
        v3,
        predicted,
        measured: after - before,
        terms_nonneg,
        descended: after < before,
    })
}

/// Central differences of `cost` at `theta`, one entry at a time.
pub fn finite_diff_oracle(
    cost: impl Fn(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>, String> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        ));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let up = cost(&probe);
        probe[k] = orig - step;
        let down = cost(&probe);
        probe[k] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Flattens all layer weights in order.
pub fn flatten_weights(net: &Network) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weights.as_slice().iter().copied())
        .collect()
}

/// Inverse of [`flatten_weights`] onto the layout of `like`.
pub fn unflatten_weights(like: &Network, theta: &[f64]) -> Network {
    let mut net = like.clone();
    let mut offset = 0;
    for i in 0..net.depth() {
        let w = net.weights_mut(i).as_mut_slice();
        let n = w.len();
        w.copy_from_slice(&theta[offset..offset + n]);
        offset += n;
    }
    net
}

// ---------------------------------------------------------------------------
// randomized suites

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Perturbation distribution for the gap check.
    pub gap_s: SDraw,
    /// Perturbation distribution for the descent check (rectified to `|s|`).
    pub descent_s: SDraw,
    pub alpha: f64,
    pub c: f64,
    pub min_depth: usize,
    pub max_depth: usize,
    pub max_width: usize,
    #[doc(hidden)]
    pub feedback_source: FeedbackSource,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            gap_s: SDraw::Uniform(-0.5, 0.5),
            descent_s: SDraw::Normal(1.0),
            alpha: 1e-4,
            c: 0.1,
            min_depth: 2,
            max_depth: 4,
            max_width: 16,
            feedback_source: FeedbackSource::Svd,
        }
    }
}

/// Random tanh network with an identity output layer, plus a frozen
/// reference network of the same shape and one sample whose target comes
/// from the reference.
pub fn random_problem<R: Rng + ?Sized>(
    rng: &mut R,
    min_depth: usize,
    max_depth: usize,
    max_width: usize,
) -> (Network, Sample) {
    let depth = rng.random_range(min_depth..=max_depth);
    let input = rng.random_range(2..=max_width.clamp(2, 8));
    let hidden: Vec<usize> = (0..depth - 1)
        .map(|_| rng.random_range(2..=max_width.max(2)))
        .collect();
    let outputs = 2;
    let specs = mlp_specs(input, &hidden, outputs, Activation::Tanh);
    let net = Network::init(&specs, rng).expect("valid specs");
    let reference = Network::init(&specs, rng).expect("valid specs");
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
    let action = rng.random_range(0..outputs);
    let target = reference.predict(&x).expect("matching input")[action];
    (net, Sample { x, action, target })
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub trials: Vec<GapTrial>,
    pub violations: Vec<usize>,
    /// Smallest `bound − gap` over all trials.
    pub min_slack: f64,
    pub mean_gap: f64,
    pub mean_bound: f64,
}

impl GapReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn prop1_gap_check(cfg: &VerifyConfig) -> Result<GapReport, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(11);
    let mut trials = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let (net, sample) = random_problem(&mut rng, cfg.min_depth, cfg.max_depth, cfg.max_width);
        let s = cfg.gap_s.draw(&mut rng);
        trials.push(prop1_gap(&net, &sample, s, cfg.c, cfg.feedback_source)?);
    }
    let violations = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.holds)
        .map(|(i, _)| i)
        .collect();
    let n = trials.len().max(1) as f64;
    Ok(GapReport {
        min_slack: trials
            .iter()
            .map(|t| t.bound - t.gap)
            .fold(f64::INFINITY, f64::min),
        mean_gap: trials.iter().map(|t| t.gap).sum::<f64>() / n,
        mean_bound: trials.iter().map(|t| t.bound).sum::<f64>() / n,
        trials,
        violations,
    })
}

#[derive(Debug, Clone)]
pub struct DescentSummary {
    pub trials: Vec<DescentReport>,
    /// Trials where some V term came out negative.
    pub negative_terms: Vec<usize>,
    pub descent_fraction: f64,
    pub mean_measured: f64,
}

impl DescentSummary {
    pub const REQUIRED_DESCENT_FRACTION: f64 = 0.95;

    pub fn pass(&self) -> bool {
        self.negative_terms.is_empty()
            && self.descent_fraction >= Self::REQUIRED_DESCENT_FRACTION
            && self.mean_measured <= 0.0
    }
}

pub fn thm1_descent_check(cfg: &VerifyConfig) -> Result<DescentSummary, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(12);
    let mut trials = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let (net, sample) = random_problem(&mut rng, cfg.min_depth, cfg.max_depth, cfg.max_width);
        let s = cfg.descent_s.draw(&mut rng).abs();
        trials.push(thm1_descent(
            &net,
            &sample,
            cfg.alpha,
            cfg.c,
            s,
            cfg.feedback_source,
        )?);
    }
    let negative_terms = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.terms_nonneg)
        .map(|(i, _)| i)
        .collect();
    let n = trials.len().max(1) as f64;
    Ok(DescentSummary {
        descent_fraction: trials.iter().filter(|t| t.descended).count() as f64 / n,
        mean_measured: trials.iter().map(|t| t.measured).sum::<f64>() / n,
        trials,
        negative_terms,
    })
}

pub const REPORT_HEADER: &str = "check,trial,s,eps,gap,bound,v1,v2,v3,descent";

/// Per-trial CSV followed by a `# summary` line.
pub fn write_report_csv<W: Write>(
    gap: &GapReport,
    descent: &DescentSummary,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for (i, t) in gap.trials.iter().enumerate() {
        writeln!(out, "gap,{i},{},{},{},{},,,,", t.s, t.eps, t.gap, t.bound)?;
    }
    for (i, t) in descent.trials.iter().enumerate() {
        writeln!(
            out,
            "descent,{i},{},{},,,{},{},{},{}",
            t.s,
            t.eps,
            t.v1.iter().sum::<f64>(),
            t.v2.iter().sum::<f64>(),
            t.v3.iter().sum::<f64>(),
            t.measured
        )?;
    }
    writeln!(out, "{}", summary_line(gap, descent))?;
    Ok(())
}

pub fn summary_line(gap: &GapReport, descent: &DescentSummary) -> String {
    let status = if gap.pass() && descent.pass() {
        "PASS"
    } else {
        "FAIL"
    };
    format!(
        "# summary: {status} gap_trials={} gap_violations={} min_slack={:e} mean_gap={:e} mean_bound={:e} \
         descent_trials={} negative_terms={} descent_fraction={:.4} mean_descent={:e}",
        gap.trials.len(),
        gap.violations.len(),
        gap.min_slack,
        gap.mean_gap,
        gap.mean_bound,
        descent.trials.len(),
        descent.negative_terms.len(),
        descent.descent_fraction,
        descent.mean_measured
    )
}
