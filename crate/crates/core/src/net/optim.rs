use std::fmt;
use std::str::FromStr;

use crate::linalg::Matrix;

use super::{NetError, Network};

/// Radially rescales `w` so that `‖w‖_F ≤ bound`.
pub fn project_layer(w: &mut Matrix, bound: f64) {
    let norm = w.frobenius();
    if norm > bound {
        let k = bound / norm;
        for v in w.as_mut_slice() {
            *v *= k;
        }
    }
}

fn check_direction(
    net: &Network,
    grads: &[Matrix],
    lambdas: &[f64],
    alpha: f64,
) -> Result<(), NetError> {
    if grads.len() != net.depth() || lambdas.len() != net.depth() {
        return Err(NetError::Length {
            what: "per-layer update",
            expected: net.depth(),
            got: grads.len().min(lambdas.len()),
        });
    }
    for (g, layer) in grads.iter().zip(net.layers()) {
        if g.shape() != layer.weights.shape() {
            return Err(NetError::Linalg(
                crate::linalg::LinalgError::DimensionMismatch {
                    op: "apply_update",
                    left: layer.weights.shape(),
                    right: g.shape(),
                },
            ));
        }
    }
    let finite = alpha.is_finite()
        && alpha > 0.0
        && lambdas.iter().all(|l| l.is_finite())
        && grads.iter().all(|g| g.is_finite());
    if finite {
        Ok(())
    } else {
        Err(NetError::NonFiniteUpdate)
    }
}

/// Plain step `W ← W − α (G + λ W)` per layer followed by projection.
/// On a non-finite direction the network is left untouched.
pub fn apply_update(
    net: &mut Network,
    grads: &[Matrix],
    lambdas: &[f64],
    alpha: f64,
    bound: f64,
) -> Result<(), NetError> {
    check_direction(net, grads, lambdas, alpha)?;
    for (i, (g, &lambda)) in grads.iter().zip(lambdas).enumerate() {
        let w = net.weights_mut(i);
        for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *wv -= alpha * (gv + lambda * *wv);
        }
        project_layer(w, bound);
    }
    Ok(())
}

/// Bias-corrected Adam moments, one accumulator per weight entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers()
            .iter()
            .map(|l| vec![0.0; l.weights.as_slice().len()])
            .collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam step on the direction `G + λ W`.
    pub fn update(
        &mut self,
        net: &mut Network,
        grads: &[Matrix],
        lambdas: &[f64],
        alpha: f64,
        bound: f64,
    ) -> Result<(), NetError> {
        check_direction(net, grads, lambdas, alpha)?;
        if self.m.len() != net.depth() {
            return Err(NetError::Length {
                what: "adam moments",
                expected: net.depth(),
                got: self.m.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (g, &lambda)) in grads.iter().zip(lambdas).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = net.weights_mut(i);
            for (((wv, gv), mv), vv) in w
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let d = gv + lambda * *wv;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * d;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * d * d;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *wv -= alpha * m_hat / (v_hat.sqrt() + self.eps);
            }
            project_layer(w, bound);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &Network) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(net)),
        }
    }

    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &[Matrix],
        lambdas: &[f64],
        alpha: f64,
        bound: f64,
    ) -> Result<(), NetError> {
        match self {
            Optimizer::Sgd => apply_update(net, grads, lambdas, alpha, bound),
            Optimizer::Adam(state) => state.update(net, grads, lambdas, alpha, bound),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Layer};

    fn scalar_net(w: f64) -> Network {
        // 1 input -> 1 output, weight matrix is 2x1 (weight, bias)
        Network::from_layers(vec![Layer {
            weights: Matrix::from_vec(2, 1, vec![w, 0.0]).unwrap(),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn grad(g: f64) -> Vec<Matrix> {
        vec![Matrix::from_vec(2, 1, vec![g, 0.0]).unwrap()]
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut net = scalar_net(1.0);
        apply_update(&mut net, &grad(0.0), &[0.0], 0.1, 1e3).unwrap();
        assert_eq!(net.layer(0).weights.get(0, 0), 1.0);
    }

    #[test]
    fn scalar_sgd_step() {
        let mut net = scalar_net(1.0);
        apply_update(&mut net, &grad(2.0), &[0.0], 0.1, 1e3).unwrap();
        assert!((net.layer(0).weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_update_is_skipped() {
        let mut net = scalar_net(1.0);
        let mut g = grad(0.0);
        g[0].as_mut_slice()[0] = f64::NAN;
        assert!(matches!(
            apply_update(&mut net, &g, &[0.0], 0.1, 1e3),
            Err(NetError::NonFiniteUpdate)
        ));
        assert_eq!(net.layer(0).weights.get(0, 0), 1.0);
        let mut adam = AdamState::new(&net);
        assert!(adam.update(&mut net, &g, &[0.0], 0.1, 1e3).is_err());
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn projection_caps_layer_norm() {
        let mut net = scalar_net(1.0);
        apply_update(&mut net, &grad(-100.0), &[0.0], 1.0, 5.0).unwrap();
        assert!((net.layer(0).weights.frobenius() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grads_never_move() {
        let mut net = scalar_net(0.7);
        let mut adam = AdamState::new(&net);
        for _ in 0..50 {
            adam.update(&mut net, &grad(0.0), &[0.0], 0.01, 1e3)
                .unwrap();
        }
        assert_eq!(net.layer(0).weights.get(0, 0), 0.7);
    }

    #[test]
    fn adam_first_step_has_magnitude_alpha() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net);
        adam.update(&mut net, &grad(3.0), &[0.0], 0.01, 1e3)
            .unwrap();
        assert!((net.layer(0).weights.get(0, 0) + 0.01).abs() < 1e-9);
    }
}
