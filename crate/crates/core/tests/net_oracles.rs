use coop_rl::linalg::{svd, Matrix};
use coop_rl::net::{
    apply_update, feedback_matrix, masked_error, mlp_specs, Activation, Layer, Network, Optimizer,
    OptimizerKind,
};
use coop_rl::theory::{finite_diff_oracle, flatten_weights, random_problem, unflatten_weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn backprop_gradient(net: &Network, x: &[f64], action: usize, target: f64) -> Vec<f64> {
    let (q, cache) = net.forward(x).unwrap();
    let e = masked_error(net.output_dim(), action, -(target - q[action]));
    (0..net.depth())
        .flat_map(|i| net.backprop_delta(&cache, &e, i).unwrap().into_vec())
        .collect()
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for trial in 0..100 {
        let (net, sample) = random_problem(&mut rng, 1, 4, 10);
        let theta = flatten_weights(&net);
        let cost = |th: &[f64]| {
            unflatten_weights(&net, th)
                .sample_cost(&sample.x, sample.action, sample.target)
                .unwrap()
        };
        let fd_fine = finite_diff_oracle(cost, &theta, 1e-5).unwrap();
        let fd_coarse = finite_diff_oracle(cost, &theta, 1e-4).unwrap();
        let bp = backprop_gradient(&net, &sample.x, sample.action, sample.target);
        assert_eq!(bp.len(), theta.len());

        let diff: Vec<f64> = bp.iter().zip(&fd_fine).map(|(a, b)| a - b).collect();
        let scale = norm(&fd_fine).max(1e-6);
        assert!(
            norm(&diff) <= 1e-4 * scale,
            "trial {trial}: relative error {}",
            norm(&diff) / scale
        );

        // two step sizes must agree as well, otherwise the oracle itself is noisy
        let cross: Vec<f64> = fd_fine.iter().zip(&fd_coarse).map(|(a, b)| a - b).collect();
        assert!(
            norm(&cross) <= 1e-4 * scale,
            "trial {trial}: step sizes disagree"
        );
    }
}

#[test]
fn finite_difference_basics() {
    let g = finite_diff_oracle(|t| 0.5 * t[0] * t[0], &[3.0], 1e-5).unwrap();
    assert!((g[0] - 3.0).abs() < 1e-8);
    let g = finite_diff_oracle(|t| 2.0 * t[0] - 0.5 * t[1], &[1.0, -4.0], 1e-3).unwrap();
    assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
    assert!(finite_diff_oracle(|t| t[0], &[0.0], 1e-2).is_err());
    assert!(finite_diff_oracle(|t| t[0], &[0.0], 1e-8).is_err());
}

#[test]
fn zero_shift_feedback_equals_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (net, sample) = random_problem(&mut rng, 1, 4, 12);
        let (q, cache) = net.forward(&sample.x).unwrap();
        let e = masked_error(2, sample.action, q[sample.action] - sample.target);
        for (i, t) in net.transfer_matrices(&cache).unwrap().iter().enumerate() {
            let fb = feedback_matrix(t, 0.0).unwrap();
            assert_eq!(
                net.edl_feedback(&cache, &e, &fb, i).unwrap(),
                net.backprop_delta(&cache, &e, i).unwrap()
            );
        }
    }
}

#[test]
fn feedback_shifts_spectrum_of_random_four_by_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..20 {
        let t =
            Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let base = svd(&t).unwrap().sigma;
        let fb = feedback_matrix(&t, 0.1).unwrap();
        let shifted = svd(&fb.b).unwrap().sigma;
        for (b, s) in base.iter().zip(&shifted) {
            assert!((b + 0.1 - s).abs() < 1e-10, "{b} + 0.1 vs {s}");
        }
        // singular vectors are shared
        let lhs = fb.b.matmul(&fb.svd.vt.transpose()).unwrap();
        let rhs = t
            .matmul(&fb.svd.vt.transpose())
            .unwrap()
            .add(&fb.svd.u.scale(0.1).unwrap())
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().frobenius() < 1e-10);
    }
}

fn scalar_net(w: f64, b: f64) -> Network {
    Network::from_layers(vec![Layer {
        weights: Matrix::from_vec(2, 1, vec![w, b]).unwrap(),
        activation: Activation::Identity,
    }])
    .unwrap()
}

#[test]
fn adam_trace_matches_scalar_recursion() {
    let (alpha, lambda) = (0.05, 0.01);
    let mut net = scalar_net(1.5, -0.5);
    let mut opt = Optimizer::new(OptimizerKind::Adam, &net);

    // independent scalar Adam per weight on d = g + λw
    let (mut w, mut m, mut v) = ([1.5f64, -0.5], [0.0f64; 2], [0.0f64; 2]);
    for k in 1..=10 {
        let g = [0.3 * k as f64 - 1.0, (k as f64).sin()];
        let grad = Matrix::from_vec(2, 1, g.to_vec()).unwrap();
        opt.step(&mut net, &[grad], &[lambda], alpha, 1e3).unwrap();
        for j in 0..2 {
            let d = g[j] + lambda * w[j];
            m[j] = 0.9 * m[j] + 0.1 * d;
            v[j] = 0.999 * v[j] + 0.001 * d * d;
            let mh = m[j] / (1.0 - 0.9f64.powi(k));
            let vh = v[j] / (1.0 - 0.999f64.powi(k));
            w[j] -= alpha * mh / (vh.sqrt() + 1e-8);
        }
        let got = net.layer(0).weights.as_slice();
        assert!(
            (got[0] - w[0]).abs() < 1e-14 && (got[1] - w[1]).abs() < 1e-14,
            "step {k}"
        );
    }
}

#[test]
fn projected_update_respects_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let specs = mlp_specs(3, &[5], 2, Activation::Relu);
    for bound in [0.5, 2.0, 10.0] {
        let mut net = Network::init(&specs, &mut rng).unwrap();
        for _ in 0..20 {
            let grads: Vec<Matrix> = net
                .layers()
                .iter()
                .map(|l| {
                    let (r, c) = l.weights.shape();
                    Matrix::from_vec(
                        r,
                        c,
                        (0..r * c).map(|_| rng.random_range(-50.0..50.0)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            apply_update(&mut net, &grads, &[0.0, 0.0], 0.1, bound).unwrap();
            for l in net.layers() {
                assert!(l.weights.frobenius() <= bound * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn sgd_step_follows_the_gradient_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (net, sample) = random_problem(&mut rng, 2, 3, 6);
    let g = backprop_gradient(&net, &sample.x, sample.action, sample.target);
    let mut stepped = net.clone();
    let grads: Vec<Matrix> = {
        let mut off = 0;
        net.layers()
            .iter()
            .map(|l| {
                let (r, c) = l.weights.shape();
                let m = Matrix::from_vec(r, c, g[off..off + r * c].to_vec()).unwrap();
                off += r * c;
                m
            })
            .collect()
    };
    let lambdas = vec![0.0; net.depth()];
    Optimizer::new(OptimizerKind::Sgd, &net)
        .step(&mut stepped, &grads, &lambdas, 1e-2, 1e3)
        .unwrap();
    for ((a, b), gi) in flatten_weights(&stepped)
        .iter()
        .zip(flatten_weights(&net))
        .zip(&g)
    {
        assert!((a - (b - 1e-2 * gi)).abs() < 1e-15);
    }
}
