//! Cooperative dual-network Q-learning with error-driven weight updates.
//!
//! * [`linalg`]: dense matrices and a one-sided Jacobi SVD.
//! * [`net`]: fully connected Q-networks, transfer matrices, backprop and
//!   EDL feedback, optimizers, checkpoints.
//! * [`env`]: cart-pole simulator with state or frame-difference pixels.
//! * [`replay`]: FIFO experience replay.
//! * [`agent`]: DQL, EDQL, G-coop and coop training.
//! * [`theory`]: randomized checks of the cost-gap bound and descent terms.

pub mod agent;
pub mod env;
pub mod linalg;
pub mod net;
pub mod replay;
pub mod theory;

pub use agent::{
    greedy_rollouts, run_training, run_training_with, Agent, AgentConfig, AgentError, Phase,
    Rollout, RunAborted, RunMetrics, RunOutput, Variant,
};
pub use env::{Action, CartPole, CartpoleState, ObsMode, Observation, PixelConfig};
pub use linalg::{svd, Matrix, SvdResult};
pub use net::{Activation, ForwardCache, LayerSpec, Network, OptimizerKind};
pub use replay::{Experience, ReplayBuffer};
