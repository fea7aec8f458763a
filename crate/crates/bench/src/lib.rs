//! Shared fixtures for the `coop-rl` benchmarks.

use coop_rl::linalg::Matrix;
use coop_rl::{Activation, Agent, AgentConfig, Experience, Network, Observation, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("sized data")
}

/// Q-network for 4-dimensional state input with the given hidden widths.
pub fn state_net(hidden: &[usize], seed: u64) -> Network {
    let specs = coop_rl::net::mlp_specs(4, hidden, 2, Activation::Relu);
    Network::init(&specs, &mut rng(seed)).expect("valid specs")
}

pub fn random_batch(n: usize, seed: u64) -> Vec<Experience> {
    let mut r = rng(seed);
    let obs = |r: &mut ChaCha8Rng| {
        Observation::StateVec(std::array::from_fn(|_| r.random_range(-0.2..0.2)))
    };
    (0..n)
        .map(|_| Experience {
            obs: obs(&mut r),
            action: r.random_range(0..2),
            reward: 1.0,
            next_obs: obs(&mut r),
            terminal: false,
        })
        .collect()
}

/// Agent with default settings for `variant` and two independently initialized networks.
pub fn agent(variant: Variant, seed: u64) -> (Agent, AgentConfig) {
    let cfg = AgentConfig {
        variant,
        ..AgentConfig::default()
    };
    let specs = cfg.network_specs();
    let mut r = rng(seed);
    let q1 = Network::init(&specs, &mut r).expect("valid specs");
    let q2 = Network::init(&specs, &mut r).expect("valid specs");
    (Agent::from_networks(&cfg, q1, q2, rng(seed + 1)), cfg)
}
