//! Fully connected Q-network with an explicit forward cache.
//!
//! Weights of layer `i` are stored as an `(in_dim + 1) x out_dim` matrix
//! whose last row is the bias; inputs are augmented with a constant 1 so a
//! layer computes `z = Wᵀ [a; 1]`. Layers are indexed from 0 in code.

mod checkpoint;
mod edl;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use edl::{feedback_matrix, lambda_signed, FeedbackMatrix};
pub use optim::{apply_update, project_layer, AdamState, Optimizer, OptimizerKind};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

/// Radial projection bound on each layer's Frobenius norm.
pub const DEFAULT_WEIGHT_BOUND: f64 = 1e3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("layer index {index} out of range for a {depth}-layer network")]
    LayerIndex { index: usize, depth: usize },
    #[error("invalid network layout: {0}")]
    Layout(String),
    #[error("non-finite update, step skipped")]
    NonFiniteUpdate,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output.
    #[inline]
    fn derivative(self, z: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(NetError::Layout(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Layer specs for `input -> hidden... -> outputs` with `hidden_act` on the
/// hidden layers and an identity output layer.
pub fn mlp_specs(
    input: usize,
    hidden: &[usize],
    outputs: usize,
    hidden_act: Activation,
) -> Vec<LayerSpec> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(outputs);
    let d = dims.len() - 1;
    (0..d)
        .map(|i| {
            let act = if i + 1 == d {
                Activation::Identity
            } else {
                hidden_act
            };
            LayerSpec::new(dims[i], dims[i + 1], act)
        })
        .collect()
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), NetError> {
    let last = specs
        .last()
        .ok_or_else(|| NetError::Layout("network needs at least one layer".into()))?;
    if last.activation != Activation::Identity {
        return Err(NetError::Layout(
            "output layer must use the identity activation".into(),
        ));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(NetError::Layout(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(NetError::Layout(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                s.in_dim,
                i - 1,
                specs[i - 1].out_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// The ordered weight matrices of a network, one per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Everything the backward pass needs from one forward evaluation.
///
/// `a[0]` is the input with a trailing bias entry, `a[i]` for `0 < i < d`
/// is the output of layer `i - 1` with a bias entry, and `a[d]` is the raw
/// network output. `z[i]` and `fprime[i]` belong to layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub a: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub fprime: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.a.last().expect("cache has an output")
    }
}

impl Network {
    /// All-zero weights.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, NetError> {
        validate_specs(specs)?;
        Ok(Self {
            layers: specs
                .iter()
                .map(|s| Layer {
                    weights: Matrix::zeros(s.in_dim + 1, s.out_dim),
                    activation: s.activation,
                })
                .collect(),
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NetError> {
        let mut net = Self::zeros(specs)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            for w in layer.weights.as_mut_slice() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec::new(l.in_dim(), l.out_dim(), l.activation))
            .collect();
        validate_specs(&specs)?;
        if layers.iter().any(|l| !l.weights.is_finite()) {
            return Err(NetError::Layout("non-finite weights".into()));
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    /// Raw mutable access to one layer's weights.
    pub fn weights_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.layers[i].weights
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.in_dim(), l.out_dim(), l.activation))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn max_layer_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius())
            .fold(0.0, f64::max)
    }

    /// Zero matrices shaped like each layer.
    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::Length {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Output only, without building a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            let z = affine(&layer.weights, &a);
            a = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetError> {
        self.check_input(x)?;
        let d = self.depth();
        let mut a_list = Vec::with_capacity(d + 1);
        let mut z_list = Vec::with_capacity(d);
        let mut fp_list = Vec::with_capacity(d);
        let mut current = x.to_vec();
        for layer in &self.layers {
            let z = affine(&layer.weights, &current);
            let out: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let fp: Vec<f64> = z
                .iter()
                .zip(&out)
                .map(|(&zv, &ov)| layer.activation.derivative(zv, ov))
                .collect();
            current.push(1.0);
            a_list.push(std::mem::replace(&mut current, out));
            z_list.push(z);
            fp_list.push(fp);
        }
        let q = current.clone();
        a_list.push(current);
        Ok((
            q,
            ForwardCache {
                a: a_list,
                z: z_list,
                fprime: fp_list,
            },
        ))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), NetError> {
        let d = self.depth();
        if cache.z.len() != d || cache.fprime.len() != d || cache.a.len() != d + 1 {
            return Err(NetError::Length {
                what: "forward cache layers",
                expected: d,
                got: cache.z.len(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.a[i].len() != layer.in_dim() + 1 || cache.fprime[i].len() != layer.out_dim() {
                return Err(NetError::Length {
                    what: "forward cache entry",
                    expected: layer.in_dim() + 1,
                    got: cache.a[i].len(),
                });
            }
        }
        Ok(())
    }

    /// Transfer matrices for every layer, via
    /// `T_last = diag(f'_last)` and `T_i = diag(f'_i) · W̃_{i+1} · T_{i+1}`
    /// where `W̃` drops the bias row. `T_i` is `out_dim(i) x outputs` and
    /// maps an output error to the pre-activation error of layer `i`.
    pub fn transfer_matrices(&self, cache: &ForwardCache) -> Result<Vec<Matrix>, NetError> {
        self.check_cache(cache)?;
        let d = self.depth();
        let n_out = self.output_dim();
        let mut out: Vec<Matrix> = Vec::with_capacity(d);
        let mut t = Matrix::diag(&cache.fprime[d - 1])?;
        out.push(t.clone());
        for i in (0..d - 1).rev() {
            let next_w = &self.layers[i + 1].weights;
            let rows = self.layers[i].out_dim();
            let next_rows = self.layers[i + 1].out_dim();
            let mut ti = Matrix::zeros(rows, n_out);
            {
                let tdata = t.as_slice();
                let wdata = next_w.as_slice();
                let dst = ti.as_mut_slice();
                for r in 0..rows {
                    let fp = cache.fprime[i][r];
                    if fp == 0.0 {
                        continue;
                    }
                    let wrow = &wdata[r * next_rows..(r + 1) * next_rows];
                    let drow = &mut dst[r * n_out..(r + 1) * n_out];
                    for (k, &w) in wrow.iter().enumerate() {
                        let scale = fp * w;
                        for (o, tv) in drow.iter_mut().zip(&tdata[k * n_out..(k + 1) * n_out]) {
                            *o += scale * tv;
                        }
                    }
                }
            }
            out.push(ti.clone());
            t = ti;
        }
        out.reverse();
        Ok(out)
    }

    pub fn transfer_matrix(&self, cache: &ForwardCache, i: usize) -> Result<Matrix, NetError> {
        if i >= self.depth() {
            return Err(NetError::LayerIndex {
                index: i,
                depth: self.depth(),
            });
        }
        Ok(self.transfer_matrices(cache)?.swap_remove(i))
    }

    /// Gradient of `½‖e‖²` with respect to layer `i`, where `eps_vec` is the
    /// derivative of the loss with respect to the network output:
    /// `outer(a_i, T_i · eps_vec)`.
    pub fn backprop_delta(
        &self,
        cache: &ForwardCache,
        eps_vec: &[f64],
        i: usize,
    ) -> Result<Matrix, NetError> {
        let t = self.transfer_matrix(cache, i)?;
        layer_feedback(cache, &t, eps_vec, i)
    }

    /// EDL feedback `outer(a_i, B_i · eps_vec)`.
    pub fn edl_feedback(
        &self,
        cache: &ForwardCache,
        eps_vec: &[f64],
        fb: &FeedbackMatrix,
        i: usize,
    ) -> Result<Matrix, NetError> {
        if i >= self.depth() {
            return Err(NetError::LayerIndex {
                index: i,
                depth: self.depth(),
            });
        }
        self.check_cache(cache)?;
        layer_feedback(cache, &fb.b, eps_vec, i)
    }

    /// Squared output error `½ (y - q[action])²` for one sample.
    pub fn sample_cost(&self, x: &[f64], action: usize, target: f64) -> Result<f64, NetError> {
        let q = self.predict(x)?;
        let eps = target - q[action];
        Ok(0.5 * eps * eps)
    }
}

/// `outer(a_i, m · eps_vec)` with the layer input taken from the cache.
pub(crate) fn layer_feedback(
    cache: &ForwardCache,
    m: &Matrix,
    eps_vec: &[f64],
    i: usize,
) -> Result<Matrix, NetError> {
    if eps_vec.len() != m.cols() {
        return Err(NetError::Length {
            what: "output error",
            expected: m.cols(),
            got: eps_vec.len(),
        });
    }
    let dir = m.matvec(eps_vec)?;
    Ok(crate::linalg::outer(&cache.a[i], &dir)?)
}

/// `Wᵀ [a; 1]` for a weight matrix with a trailing bias row.
#[inline]
fn affine(w: &Matrix, a: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    let data = w.as_slice();
    let mut z = data[a.len() * cols..(a.len() + 1) * cols].to_vec();
    for (k, &ak) in a.iter().enumerate() {
        if ak == 0.0 {
            continue;
        }
        for (zj, wj) in z.iter_mut().zip(&data[k * cols..(k + 1) * cols]) {
            *zj += ak * wj;
        }
    }
    z
}

/// Masked output error: `value` at `action`, zero elsewhere.
pub fn masked_error(outputs: usize, action: usize, value: f64) -> Vec<f64> {
    let mut e = vec![0.0; outputs];
    e[action] = value;
    e
}
