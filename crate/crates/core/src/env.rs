//! Cart-pole simulator with state-vector or rendered frame-difference
//! observations.

use std::io::Write;

use rand::Rng;
use thiserror::Error;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_POLE_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_STEPS: u32 = 200;

const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_POLE_LENGTH;

// rendering geometry, metres
const CART_WIDTH: f64 = 0.5;
const CART_HEIGHT: f64 = 0.3;
const CART_BOTTOM: f64 = 0.2;
const CART_SHADE: f64 = 1.0;
const POLE_SHADE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already finished, call reset first")]
    EpisodeDone,
    #[error("pixel grid must be at least 8x8, got {height}x{width}")]
    GridTooSmall { height: usize, width: usize },
    #[error("non-finite cart-pole state")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Pole fallen or cart off the track.
    pub fn is_failed(&self) -> bool {
        self.theta.abs() > THETA_LIMIT || self.x.abs() > X_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Action::Left),
            1 => Some(Action::Right),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn force(self) -> f64 {
        match self {
            Action::Left => -FORCE_MAG,
            Action::Right => FORCE_MAG,
        }
    }
}

/// One semi-implicit Euler step of the cart-pole equations under `force`.
pub fn integrate(s: CartpoleState, force: f64) -> CartpoleState {
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;

    let x_dot = s.x_dot + TAU * x_acc;
    let theta_dot = s.theta_dot + TAU * theta_acc;
    CartpoleState {
        x: s.x + TAU * x_dot,
        x_dot,
        theta: s.theta + TAU * theta_dot,
        theta_dot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelConfig {
    pub height: usize,
    pub width: usize,
    /// Pixels per metre.
    pub scale: f64,
}

impl Default for PixelConfig {
    fn default() -> Self {
        Self {
            height: 24,
            width: 48,
            scale: 48.0 / (2.0 * X_LIMIT),
        }
    }
}

impl PixelConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.height < 8 || self.width < 8 {
            return Err(EnvError::GridTooSmall {
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World coordinates of the centre of pixel `(row, col)`; row 0 is the top.
    fn pixel_centre(&self, row: usize, col: usize) -> (f64, f64) {
        let wx = (col as f64 + 0.5) / self.scale - self.width as f64 / (2.0 * self.scale);
        let wy = (self.height as f64 - row as f64 - 0.5) / self.scale;
        (wx, wy)
    }

    fn col_of(&self, wx: f64) -> f64 {
        (wx + self.width as f64 / (2.0 * self.scale)) * self.scale - 0.5
    }

    fn row_of(&self, wy: f64) -> f64 {
        self.height as f64 - wy * self.scale - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsMode {
    State,
    Pixels(PixelConfig),
}

impl ObsMode {
    pub fn obs_len(&self) -> usize {
        match self {
            ObsMode::State => 4,
            ObsMode::Pixels(cfg) => cfg.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    StateVec([f64; 4]),
    Pixels(Vec<f64>),
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Observation::StateVec(v) => v,
            Observation::Pixels(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    /// Ended by the step cap rather than by failure.
    pub truncated: bool,
}

/// Grayscale frame of the scene: cart rectangle and pole segment.
pub fn render_frame(s: &CartpoleState, cfg: &PixelConfig) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    let mut frame = vec![0.0; h * w];

    // cart: pixels whose centre lies inside the rectangle
    let left = cfg.col_of(s.x - CART_WIDTH / 2.0).ceil().max(0.0);
    let right = cfg
        .col_of(s.x + CART_WIDTH / 2.0)
        .floor()
        .min(w as f64 - 1.0);
    let top = cfg.row_of(CART_BOTTOM + CART_HEIGHT).ceil().max(0.0);
    let bottom = cfg.row_of(CART_BOTTOM).floor().min(h as f64 - 1.0);
    if left <= right && top <= bottom {
        for r in top as usize..=bottom as usize {
            for c in left as usize..=right as usize {
                frame[r * w + c] = CART_SHADE;
            }
        }
    }

    // pole: pixels within half a pixel of the segment
    let base = (s.x, CART_BOTTOM + CART_HEIGHT);
    let len = 2.0 * HALF_POLE_LENGTH;
    let tip = (base.0 + len * s.theta.sin(), base.1 + len * s.theta.cos());
    let half = 0.5 / cfg.scale;
    let c0 = (cfg.col_of(base.0.min(tip.0) - half).floor().max(0.0)) as usize;
    let c1 = cfg
        .col_of(base.0.max(tip.0) + half)
        .ceil()
        .min(w as f64 - 1.0);
    let r0 = (cfg.row_of(base.1.max(tip.1) + half).floor().max(0.0)) as usize;
    let r1 = cfg
        .row_of(base.1.min(tip.1) - half)
        .ceil()
        .min(h as f64 - 1.0);
    if c1 >= 0.0 && r1 >= 0.0 {
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let p = cfg.pixel_centre(r, c);
                if segment_distance(p, base, tip) <= half && frame[r * w + c] < POLE_SHADE {
                    frame[r * w + c] = POLE_SHADE;
                }
            }
        }
    }
    frame
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// `frame(curr) − frame(prev)`, clamped to `[−1, 1]`.
pub fn render_encode(
    prev: &CartpoleState,
    curr: &CartpoleState,
    cfg: &PixelConfig,
) -> Result<Observation, EnvError> {
    cfg.validate()?;
    let a = render_frame(prev, cfg);
    let b = render_frame(curr, cfg);
    Ok(Observation::Pixels(
        b.iter()
            .zip(&a)
            .map(|(x, y)| (x - y).clamp(-1.0, 1.0))
            .collect(),
    ))
}

#[derive(Debug, Clone)]
pub struct CartPole {
    mode: ObsMode,
    state: CartpoleState,
    steps: u32,
    done: bool,
}

impl CartPole {
    pub fn new(mode: ObsMode) -> Result<Self, EnvError> {
        if let ObsMode::Pixels(cfg) = &mode {
            cfg.validate()?;
        }
        Ok(Self {
            mode,
            state: CartpoleState {
                x: 0.0,
                x_dot: 0.0,
                theta: 0.0,
                theta_dot: 0.0,
            },
            steps: 0,
            done: true,
        })
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn state(&self) -> CartpoleState {
        self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn observe(&self, prev: &CartpoleState) -> Result<Observation, EnvError> {
        match &self.mode {
            ObsMode::State => Ok(Observation::StateVec(self.state.to_array())),
            ObsMode::Pixels(cfg) => render_encode(prev, &self.state, cfg),
        }
    }

    /// Starts an episode from a state drawn uniformly in `[−0.05, 0.05]⁴`.
    pub fn reset<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<(CartpoleState, Observation), EnvError> {
        let mut draw = || rng.random_range(-0.05..=0.05);
        self.state = CartpoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.steps = 0;
        self.done = false;
        let obs = self.observe(&self.state.clone())?;
        Ok((self.state, obs))
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: CartpoleState) -> Result<Observation, EnvError> {
        if !state.is_finite() {
            return Err(EnvError::NonFinite);
        }
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.observe(&state)
    }

    pub fn step(&mut self, action: Action) -> Result<(CartpoleState, StepResult), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if !self.state.is_finite() {
            return Err(EnvError::NonFinite);
        }
        let prev = self.state;
        self.state = integrate(prev, action.force());
        self.steps += 1;
        let failed = self.state.is_failed();
        let truncated = !failed && self.steps >= MAX_STEPS;
        self.done = failed || truncated;
        let obs = self.observe(&prev)?;
        Ok((
            self.state,
            StepResult {
                obs,
                reward: 1.0,
                done: self.done,
                truncated,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u32,
    pub state: CartpoleState,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

pub const TRAJECTORY_HEADER: &str = "step,x,x_dot,theta,theta_dot,action,reward,done";

pub fn write_trajectory_csv<W: Write>(
    records: &[TrajectoryRecord],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.state.x,
            r.state.x_dot,
            r.state.theta,
            r.state.theta_dot,
            r.action,
            r.reward,
            r.done
        )?;
    }
    Ok(())
}
