//! Q-learning agents: DQL, EDQL, G-coop and coop.
//!
//! All four variants share one training loop. They differ in two switches:
//!
//! * where the TD target comes from: a periodically synced copy of the
//!   actor (DQL, EDQL) or a second, independently initialized network that
//!   trades roles with the actor every `C` plays (G-coop, coop);
//! * how the weight adjustment is formed: the backpropagated gradient
//!   (DQL, G-coop) or the error-driven feedback through the perturbed
//!   feedback matrices `B = U (Σ + sI) Vᵀ` plus the signed regularizer
//!   (EDQL, coop).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::env::{Action, CartPole, EnvError, ObsMode, Observation, TrajectoryRecord};
use crate::linalg::Matrix;
use crate::net::{
    feedback_matrix, lambda_signed, mlp_specs, Activation, NetError, Network, Optimizer,
    OptimizerKind, DEFAULT_WEIGHT_BOUND,
};
use crate::replay::{Experience, ReplayBuffer, ReplayError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("Q-values contain NaN")]
    NanQ,
    #[error("empty Q-value list")]
    EmptyQ,
    #[error("{0} consecutive training steps were skipped as non-finite")]
    Diverged(u64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Dql,
    Edql,
    GCoop,
    Coop,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dql, Variant::Edql, Variant::GCoop, Variant::Coop];

    /// Two live networks alternating roles.
    pub fn is_dual(self) -> bool {
        matches!(self, Variant::GCoop | Variant::Coop)
    }

    /// Error-driven feedback instead of the plain gradient.
    pub fn uses_edl(self) -> bool {
        matches!(self, Variant::Edql | Variant::Coop)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dql => "dql",
            Variant::Edql => "edql",
            Variant::GCoop => "g-coop",
            Variant::Coop => "coop",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dql" => Ok(Variant::Dql),
            "edql" => Ok(Variant::Edql),
            "g-coop" | "gcoop" => Ok(Variant::GCoop),
            "coop" => Ok(Variant::Coop),
            other => Err(format!(
                "unknown variant `{other}` (expected dql, edql, g-coop or coop)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub alpha: f64,
    /// Per-episode multiplicative decay of `alpha`.
    pub alpha_decay: f64,
    pub alpha_min: f64,
    /// Plays per coop phase; target sync period (in updates) for DQL/EDQL.
    pub sync_period: u64,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub s0: f64,
    pub s_decay: f64,
    /// Magnitude of the signed regularization coefficient.
    pub c: f64,
    /// ε-greedy rate at episode 0.
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    /// Use `|s|` so that `s·Σ` stays positive semi-definite.
    pub enforce_descent: bool,
    pub weight_bound: f64,
    pub probe_count: usize,
    pub obs_mode: ObsMode,
    pub seed: u64,
    /// Record elapsed wall time in metrics. Off by default so that metrics
    /// depend on the configuration and seed only.
    pub wall_clock: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Coop,
            gamma: 0.99,
            alpha: 1e-3,
            alpha_decay: 0.998,
            alpha_min: 0.0,
            sync_period: 50,
            episodes: 2000,
            buffer_capacity: 5000,
            batch_size: 32,
            s0: 0.05,
            s_decay: 0.999,
            c: 1e-4,
            epsilon: 0.1,
            epsilon_decay: 0.99,
            epsilon_min: 0.01,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            enforce_descent: false,
            weight_bound: DEFAULT_WEIGHT_BOUND,
            probe_count: 64,
            obs_mode: ObsMode::State,
            seed: 0,
            wall_clock: false,
        }
    }
}

impl AgentConfig {
    /// Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) || !(self.alpha_min >= 0.0) {
            return bad("alpha_decay must lie in (0, 1] and alpha_min be non-negative");
        }
        if self.sync_period == 0 {
            return bad("C must be at least 1");
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return bad("buffer capacity and batch size must be at least 1");
        }
        if !(self.s0 >= 0.0 && self.s0.is_finite()) {
            return bad("s0 must be non-negative");
        }
        if !(self.s_decay > 0.0 && self.s_decay <= 1.0) {
            return bad("s_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.c) {
            return bad("c must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0)
            || !(0.0..=1.0).contains(&self.epsilon_min)
        {
            return bad("epsilon_decay must lie in (0, 1] and epsilon_min in [0, 1]");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be at least 1");
        }
        if !(self.weight_bound > 0.0) {
            return bad("weight bound must be positive");
        }
        if self.probe_count == 0 {
            return bad("probe count must be at least 1");
        }
        if let ObsMode::Pixels(cfg) = &self.obs_mode {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let e0 = self.epsilon;
        if e0 == 0.0 {
            return 0.0;
        }
        (e0 * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min.min(e0))
    }

    /// Step size `α(k)` used during `episode`.
    pub fn alpha_at(&self, episode: usize) -> f64 {
        (self.alpha * self.alpha_decay.powi(episode as i32)).max(self.alpha_min.min(self.alpha))
    }

    /// Perturbation scale actually used at `episode`; zero for gradient variants.
    pub fn s_scale_at(&self, episode: usize) -> f64 {
        if self.variant.uses_edl() {
            exploration_scale(episode, self.s0, self.s_decay)
        } else {
            0.0
        }
    }

    pub fn network_specs(&self) -> Vec<crate::net::LayerSpec> {
        mlp_specs(
            self.obs_mode.obs_len(),
            &self.hidden,
            Action::COUNT,
            self.activation,
        )
    }
}

// ---------------------------------------------------------------------------
// scalar pieces

/// Index of the largest Q-value, lowest index on ties.
pub fn greedy_action(q: &[f64]) -> Result<usize, AgentError> {
    if q.is_empty() {
        return Err(AgentError::EmptyQ);
    }
    if q.iter().any(|v| v.is_nan()) {
        return Err(AgentError::NanQ);
    }
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Bellman target `r + γ max q_next`, or `r` on a terminal transition.
pub fn td_target(r: f64, q_next: &[f64], terminal: bool, gamma: f64) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn td_error(target: f64, q_taken: f64) -> f64 {
    target - q_taken
}

pub fn exploration_scale(episode: usize, s0: f64, s_decay: f64) -> f64 {
    s0 * s_decay.powi(episode as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// q1 acts and learns, q2 supplies targets.
    Phase1,
    /// q2 acts and learns, q1 supplies targets.
    Phase2,
}

pub fn coop_schedule(play_counter: u64, c: u64) -> Phase {
    if (play_counter / c).is_multiple_of(2) {
        Phase::Phase1
    } else {
        Phase::Phase2
    }
}

/// Frobenius norm of the stacked output differences over the probe inputs.
pub fn q_gap(q1: &Network, q2: &Network, probes: &[Vec<f64>]) -> Result<f64, AgentError> {
    let mut acc = 0.0;
    for p in probes {
        let a = q1.predict(p)?;
        let b = q2.predict(p)?;
        acc += a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(acc.sqrt())
}

// ---------------------------------------------------------------------------
// agent

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean `½ε²` over the batch, before the update.
    pub loss: f64,
    pub skipped: bool,
}

/// Per-layer batch quantities from one pass over a minibatch.
#[derive(Debug, Clone)]
pub struct BatchDirections {
    /// Mean backpropagated gradient per layer.
    pub gradient: Vec<Matrix>,
    /// Mean error-driven feedback per layer (equals `gradient` when all `s = 0`).
    pub feedback: Vec<Matrix>,
    pub loss: f64,
}

/// Averages the gradient and the EDL feedback of `½ε²` over `batch`, with
/// targets from `target` and one perturbation per layer in `s`.
pub fn batch_directions(
    actor: &Network,
    target: &Network,
    batch: &[&Experience],
    gamma: f64,
    s: &[f64],
) -> Result<BatchDirections, AgentError> {
    let depth = actor.depth();
    let mut gradient = actor.zeros_like();
    let mut feedback = actor.zeros_like();
    let mut loss = 0.0;
    let edl = s.iter().any(|&v| v != 0.0);
    for e in batch {
        let (q, cache) = actor.forward(e.obs.as_slice())?;
        let q_next = target.predict(e.next_obs.as_slice())?;
        let y = td_target(e.reward, &q_next, e.terminal, gamma);
        let eps = td_error(y, q[e.action]);
        loss += 0.5 * eps * eps;
        // dJ/dq at the taken action
        let g_out = -eps;
        let ts = actor.transfer_matrices(&cache)?;
        for i in 0..depth {
            let t = &ts[i];
            let a_in = &cache.a[i];
            let t_col: Vec<f64> = (0..t.rows()).map(|r| t.get(r, e.action) * g_out).collect();
            accumulate_outer(&mut gradient[i], a_in, &t_col);
            if edl {
                let fb = feedback_matrix(t, s[i])?;
                let b_col: Vec<f64> = (0..fb.b.rows())
                    .map(|r| fb.b.get(r, e.action) * g_out)
                    .collect();
                accumulate_outer(&mut feedback[i], a_in, &b_col);
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for m in gradient.iter_mut().chain(feedback.iter_mut()) {
        for v in m.as_mut_slice() {
            *v *= inv;
        }
    }
    if !edl {
        feedback.clone_from(&gradient);
    }
    Ok(BatchDirections {
        gradient,
        feedback,
        loss: loss * inv,
    })
}

fn accumulate_outer(m: &mut Matrix, u: &[f64], v: &[f64]) {
    let cols = v.len();
    let data = m.as_mut_slice();
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (o, vc) in data[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *o += ur * vc;
        }
    }
}

/// Two networks with their optimizers and the role bookkeeping.
///
/// For DQL/EDQL `nets[0]` is always the actor and `nets[1]` its periodic
/// copy; for the coop variants the roles follow [`coop_schedule`].
#[derive(Debug, Clone)]
pub struct Agent {
    variant: Variant,
    gamma: f64,
    alpha: f64,
    sync_period: u64,
    c: f64,
    enforce_descent: bool,
    weight_bound: f64,
    nets: [Network; 2],
    optimizers: [Optimizer; 2],
    play_counter: u64,
    updates: u64,
    skipped: u64,
    consecutive_skips: u64,
    perturb_rng: ChaCha8Rng,
}

impl Agent {
    /// Builds the networks from `init_rng`; `perturb_rng` drives the EDL
    /// perturbations only, so gradient variants never consume it.
    pub fn new(
        cfg: &AgentConfig,
        init_rng: &mut ChaCha8Rng,
        perturb_rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let specs = cfg.network_specs();
        let q1 = Network::init(&specs, init_rng)?;
        let q2 = if cfg.variant.is_dual() {
            Network::init(&specs, init_rng)?
        } else {
            q1.clone()
        };
        Ok(Self::from_networks(cfg, q1, q2, perturb_rng))
    }

    pub fn from_networks(
        cfg: &AgentConfig,
        q1: Network,
        q2: Network,
        perturb_rng: ChaCha8Rng,
    ) -> Self {
        let optimizers = [
            Optimizer::new(cfg.optimizer, &q1),
            Optimizer::new(cfg.optimizer, &q2),
        ];
        Self {
            variant: cfg.variant,
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            sync_period: cfg.sync_period,
            c: cfg.c,
            enforce_descent: cfg.enforce_descent,
            weight_bound: cfg.weight_bound,
            nets: [q1, q2],
            optimizers,
            play_counter: 0,
            updates: 0,
            skipped: 0,
            consecutive_skips: 0,
            perturb_rng,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn learning_rate(&self) -> f64 {
        self.alpha
    }

    pub fn set_learning_rate(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    pub fn phase(&self) -> Phase {
        if self.variant.is_dual() {
            coop_schedule(self.play_counter, self.sync_period)
        } else {
            Phase::Phase1
        }
    }

    fn actor_index(&self) -> usize {
        match self.phase() {
            Phase::Phase1 => 0,
            Phase::Phase2 => 1,
        }
    }

    pub fn actor(&self) -> &Network {
        &self.nets[self.actor_index()]
    }

    pub fn target(&self) -> &Network {
        &self.nets[1 - self.actor_index()]
    }

    pub fn q1(&self) -> &Network {
        &self.nets[0]
    }

    pub fn q2(&self) -> &Network {
        &self.nets[1]
    }

    pub fn play_counter(&self) -> u64 {
        self.play_counter
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn consecutive_skips(&self) -> u64 {
        self.consecutive_skips
    }

    /// Counts one environment interaction; coop roles flip on multiples of `C`.
    pub fn advance_play(&mut self) {
        self.play_counter += 1;
    }

    /// Action from the current actor, uniformly random with probability `epsilon`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<usize, AgentError> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..Action::COUNT));
        }
        greedy_action(&self.actor().predict(obs.as_slice())?)
    }

    fn draw_perturbations(&mut self, s_scale: f64) -> Vec<f64> {
        let depth = self.nets[0].depth();
        if !self.variant.uses_edl() || s_scale == 0.0 {
            return vec![0.0; depth];
        }
        let normal = Normal::new(0.0, s_scale).expect("finite positive scale");
        (0..depth)
            .map(|_| {
                let s = normal.sample(&mut self.perturb_rng);
                if self.enforce_descent {
                    s.abs()
                } else {
                    s
                }
            })
            .collect()
    }

    /// One update of the actor on `batch`. The target network is read only.
    pub fn train_step(
        &mut self,
        batch: &[&Experience],
        s_scale: f64,
    ) -> Result<StepStats, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Config("empty training batch".into()));
        }
        let s = self.draw_perturbations(s_scale);
        let ai = self.actor_index();
        let dirs = batch_directions(&self.nets[ai], &self.nets[1 - ai], batch, self.gamma, &s)?;

        let (direction, lambdas) = if self.variant.uses_edl() {
            let lambdas = dirs
                .gradient
                .iter()
                .zip(self.nets[ai].layers())
                .map(|(g, l)| lambda_signed(g, &l.weights, self.c))
                .collect::<Result<Vec<_>, _>>()?;
            (dirs.feedback, lambdas)
        } else {
            (dirs.gradient, vec![0.0; self.nets[ai].depth()])
        };

        let outcome = if dirs.loss.is_finite() {
            let (nets, opts) = (&mut self.nets, &mut self.optimizers);
            opts[ai].step(
                &mut nets[ai],
                &direction,
                &lambdas,
                self.alpha,
                self.weight_bound,
            )
        } else {
            Err(NetError::NonFiniteUpdate)
        };
        let skipped = match outcome {
            Ok(()) => false,
            Err(NetError::NonFiniteUpdate) => true,
            Err(e) => return Err(e.into()),
        };
        if skipped {
            self.skipped += 1;
            self.consecutive_skips += 1;
        } else {
            self.consecutive_skips = 0;
            self.updates += 1;
            if !self.variant.is_dual() && self.updates.is_multiple_of(self.sync_period) {
                self.nets[1] = self.nets[0].clone();
            }
        }
        Ok(StepStats {
            loss: dirs.loss,
            skipped,
        })
    }
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// 1-based episode number.
    pub episode: usize,
    pub reward: f64,
    pub mean_reward_100: f64,
    pub td_loss: f64,
    pub q_gap: f64,
    pub s_scale: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "episode,reward,mean_reward_100,td_loss,q_gap,s_scale,wall_ms";

impl RunMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.reward,
            self.mean_reward_100,
            self.td_loss,
            self.q_gap,
            self.s_scale,
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RunMetrics>,
    pub initial_q_gap: f64,
    pub q1: Network,
    pub q2: Network,
    pub skipped_steps: u64,
    pub updates: u64,
    pub plays: u64,
    pub buffer_len: usize,
}

impl RunOutput {
    /// Mean and population standard deviation of the last (up to) 100 episode rewards.
    pub fn trailing_stats(&self) -> (f64, f64) {
        trailing_stats(&self.metrics)
    }

    pub fn final_q_gap(&self) -> f64 {
        self.metrics.last().map_or(self.initial_q_gap, |m| m.q_gap)
    }
}

pub fn trailing_stats(metrics: &[RunMetrics]) -> (f64, f64) {
    let tail = &metrics[metrics.len().saturating_sub(100)..];
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().map(|m| m.reward).sum::<f64>() / n;
    let var = tail.iter().map(|m| (m.reward - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Error)]
#[error("training aborted after {} episodes: {error}", partial.as_ref().map_or(0, |p| p.metrics.len()))]
pub struct RunAborted {
    pub error: AgentError,
    /// Everything recorded before the failure; `None` if setup itself failed.
    pub partial: Option<Box<RunOutput>>,
}

/// Independent random streams derived from one seed.
struct Streams {
    init: ChaCha8Rng,
    env: ChaCha8Rng,
    replay: ChaCha8Rng,
    policy: ChaCha8Rng,
    perturb: ChaCha8Rng,
    probe: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            init: stream(1),
            env: stream(2),
            replay: stream(3),
            policy: stream(4),
            perturb: stream(5),
            probe: stream(6),
        }
    }
}

/// Observations from uniformly random rollouts, `count` of them drawn
/// uniformly without replacement from the visited pool.
pub fn probe_observations<R: Rng + ?Sized>(
    mode: ObsMode,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, AgentError> {
    let mut env = CartPole::new(mode)?;
    let mut pool: Vec<Vec<f64>> = Vec::new();
    while pool.len() < count.max(1) * 4 {
        let (_, obs) = env.reset(rng)?;
        pool.push(obs.as_slice().to_vec());
        while !env.is_done() {
            let a = Action::from_index(rng.random_range(0..Action::COUNT)).expect("valid index");
            let (_, step) = env.step(a)?;
            pool.push(step.obs.as_slice().to_vec());
        }
    }
    let picks = rand::seq::index::sample(rng, pool.len(), count);
    Ok(picks.into_iter().map(|i| pool[i].clone()).collect())
}

/// One greedy evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub reward: f64,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Greedy episodes of `net` with no learning; start states come from `seed`.
pub fn greedy_rollouts(
    net: &Network,
    mode: ObsMode,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Rollout>, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut env = CartPole::new(mode)?;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (_, mut obs) = env.reset(&mut rng)?;
        let mut rollout = Rollout {
            reward: 0.0,
            trajectory: Vec::new(),
        };
        while !env.is_done() {
            let a = greedy_action(&net.predict(obs.as_slice())?)?;
            let (state, step) = env.step(Action::from_index(a).expect("two actions"))?;
            rollout.reward += step.reward;
            rollout.trajectory.push(TrajectoryRecord {
                step: env.steps(),
                state,
                action: a,
                reward: step.reward,
                done: step.done,
            });
            obs = step.obs;
        }
        out.push(rollout);
    }
    Ok(out)
}

pub fn run_training(cfg: &AgentConfig) -> Result<RunOutput, RunAborted> {
    run_training_with(cfg, |_| {})
}

/// Runs `cfg.episodes` episodes, calling `on_episode` after each one.
pub fn run_training_with(
    cfg: &AgentConfig,
    mut on_episode: impl FnMut(&RunMetrics),
) -> Result<RunOutput, RunAborted> {
    let start = Instant::now();
    let mut streams = Streams::new(cfg.seed);
    let early = |error: AgentError| RunAborted {
        error,
        partial: None,
    };
    let mut agent = Agent::new(cfg, &mut streams.init, streams.perturb.clone()).map_err(early)?;
    let probes =
        probe_observations(cfg.obs_mode, cfg.probe_count, &mut streams.probe).map_err(early)?;
    let mut env = CartPole::new(cfg.obs_mode).map_err(|e| early(e.into()))?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity).map_err(|e| early(e.into()))?;
    let initial_q_gap = q_gap(agent.q1(), agent.q2(), &probes).map_err(early)?;

    let mut metrics: Vec<RunMetrics> = Vec::with_capacity(cfg.episodes);
    let mut rewards: Vec<f64> = Vec::with_capacity(cfg.episodes);

    let result = (|| -> Result<(), AgentError> {
        for episode in 0..cfg.episodes {
            let s_scale = cfg.s_scale_at(episode);
            let epsilon = cfg.epsilon_at(episode);
            agent.set_learning_rate(cfg.alpha_at(episode));
            let (_, mut obs) = env.reset(&mut streams.env)?;
            let mut total = 0.0;
            let mut loss_sum = 0.0;
            let mut loss_count = 0usize;
            loop {
                let a = agent.act(&obs, epsilon, &mut streams.policy)?;
                let (_, step) = env.step(Action::from_index(a).expect("two actions"))?;
                total += step.reward;
                buffer.push(Experience {
                    obs,
                    action: a,
                    reward: step.reward,
                    next_obs: step.obs.clone(),
                    // the step cap is not a failure state, so keep bootstrapping
                    terminal: step.done && !step.truncated,
                });
                if buffer.len() >= cfg.batch_size {
                    let batch = buffer.sample(cfg.batch_size, &mut streams.replay)?;
                    let stats = agent.train_step(&batch, s_scale)?;
                    if !stats.skipped {
                        loss_sum += stats.loss;
                        loss_count += 1;
                    }
                    if agent.consecutive_skips() >= 1000 {
                        return Err(AgentError::Diverged(agent.consecutive_skips()));
                    }
                }
                agent.advance_play();
                obs = step.obs;
                if step.done {
                    break;
                }
            }
            rewards.push(total);
            let tail = &rewards[rewards.len().saturating_sub(100)..];
            let row = RunMetrics {
                episode: episode + 1,
                reward: total,
                mean_reward_100: tail.iter().sum::<f64>() / tail.len() as f64,
                td_loss: if loss_count > 0 {
                    loss_sum / loss_count as f64
                } else {
                    0.0
                },
                q_gap: q_gap(agent.q1(), agent.q2(), &probes)?,
                s_scale,
                wall_ms: if cfg.wall_clock {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            on_episode(&row);
            metrics.push(row);
        }
        Ok(())
    })();

    let output = RunOutput {
        metrics,
        initial_q_gap,
        q1: agent.q1().clone(),
        q2: agent.q2().clone(),
        skipped_steps: agent.skipped(),
        updates: agent.updates(),
        plays: agent.play_counter(),
        buffer_len: buffer.len(),
    };
    match result {
        Ok(()) => Ok(output),
        Err(error) => Err(RunAborted {
            error,
            partial: Some(Box::new(output)),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_ties_and_errors() {
        assert_eq!(greedy_action(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(greedy_action(&[0.5, 0.5]).unwrap(), 0);
        assert!(matches!(
            greedy_action(&[0.1, f64::NAN]),
            Err(AgentError::NanQ)
        ));
        assert!(matches!(greedy_action(&[]), Err(AgentError::EmptyQ)));
    }

    #[test]
    fn td_target_and_error() {
        assert_eq!(td_target(1.0, &[5.0, 7.0], true, 0.99), 1.0);
        assert!((td_target(1.0, &[0.0, 2.0], false, 0.99) - 2.98).abs() < 1e-12);
        assert_eq!(td_error(3.0, 1.0), 2.0);
        assert_eq!(td_error(1.5, 1.5), 0.0);
    }

    #[test]
    fn exploration_decay() {
        assert_eq!(exploration_scale(0, 0.05, 0.999), 0.05);
        let s = exploration_scale(1000, 0.05, 0.999);
        assert!((s - 0.05 * 0.999f64.powf(1000.0)).abs() < 1e-15);
        assert!((s - 0.0184).abs() < 1e-4);
        assert_eq!(exploration_scale(123, 0.0, 0.9), 0.0);
    }

    #[test]
    fn schedule_boundaries() {
        for k in 0..50 {
            assert_eq!(coop_schedule(k, 50), Phase::Phase1);
        }
        assert_eq!(coop_schedule(50, 50), Phase::Phase2);
        assert_eq!(coop_schedule(99, 50), Phase::Phase2);
        assert_eq!(coop_schedule(100, 50), Phase::Phase1);
    }

    #[test]
    fn q_gap_simple_cases() {
        let specs = mlp_specs(2, &[3], 2, Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(&specs, &mut rng).unwrap();
        let probes = vec![vec![0.1, 0.2], vec![-0.3, 0.9]];
        assert_eq!(q_gap(&net, &net, &probes).unwrap(), 0.0);

        // single probe, outputs (1, 0) vs (0, 0)
        let one = Network::from_layers(vec![crate::net::Layer {
            weights: Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]).unwrap(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let zero = Network::zeros(&mlp_specs(1, &[], 2, Activation::Identity)).unwrap();
        assert_eq!(q_gap(&one, &zero, &[vec![0.5]]).unwrap(), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AgentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        cfg = AgentConfig {
            sync_period: 0,
            ..AgentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = AgentConfig {
            s0: -0.1,
            ..AgentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("GCoop".parse::<Variant>().unwrap(), Variant::GCoop);
        assert!("ddqn".parse::<Variant>().is_err());
    }

    #[test]
    fn schedules_decay_to_their_floors() {
        let cfg = AgentConfig {
            epsilon_min: 0.01,
            alpha_min: 1e-5,
            ..AgentConfig::default()
        };
        assert_eq!(cfg.epsilon_at(0), 0.1);
        assert_eq!(cfg.epsilon_at(100_000), 0.01);
        assert_eq!(cfg.alpha_at(0), cfg.alpha);
        assert!((cfg.alpha_at(2) - cfg.alpha * 0.998 * 0.998).abs() < 1e-18);
        assert_eq!(cfg.alpha_at(100_000), 1e-5);
        let off = AgentConfig {
            epsilon: 0.0,
            ..AgentConfig::default()
        };
        assert_eq!(off.epsilon_at(5), 0.0);
        let g = AgentConfig {
            variant: Variant::GCoop,
            ..AgentConfig::default()
        };
        assert_eq!(g.s_scale_at(0), 0.0);
    }
}
