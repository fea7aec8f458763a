use coop_rl::env::{integrate, render_encode, render_frame, MAX_STEPS};
use coop_rl::{Action, CartPole, CartpoleState, ObsMode, PixelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CART_HALF_WIDTH: f64 = 0.25;
const CART_BOTTOM: f64 = 0.2;
const CART_TOP: f64 = 0.5;

fn upright(x: f64, theta: f64) -> CartpoleState {
    CartpoleState {
        x,
        x_dot: 0.0,
        theta,
        theta_dot: 0.0,
    }
}

/// Per-pixel rendering straight from the scene geometry.
fn brute_force_frame(s: &CartpoleState, cfg: &PixelConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.height * cfg.width];
    let half = 0.5 / cfg.scale;
    let base = (s.x, CART_TOP);
    let tip = (s.x + s.theta.sin(), CART_TOP + s.theta.cos());
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            let px = (c as f64 + 0.5) / cfg.scale - cfg.width as f64 / (2.0 * cfg.scale);
            let py = (cfg.height as f64 - r as f64 - 0.5) / cfg.scale;
            let in_cart =
                (px - s.x).abs() <= CART_HALF_WIDTH && (CART_BOTTOM..=CART_TOP).contains(&py);
            let (dx, dy) = (tip.0 - base.0, tip.1 - base.1);
            let t =
                (((px - base.0) * dx + (py - base.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let dist = ((px - base.0 - t * dx).powi(2) + (py - base.1 - t * dy).powi(2)).sqrt();
            out[r * cfg.width + c] = if in_cart {
                1.0
            } else if dist <= half {
                0.5
            } else {
                0.0
            };
        }
    }
    out
}

#[test]
fn frame_matches_per_pixel_geometry() {
    let cfg = PixelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let s = upright(rng.random_range(-2.4..2.4), rng.random_range(-0.21..0.21));
        assert_eq!(
            render_frame(&s, &cfg),
            brute_force_frame(&s, &cfg),
            "state {s:?}"
        );
    }
}

#[test]
fn one_pixel_translation_shifts_columns() {
    let cfg = PixelConfig::default();
    let step = 1.0 / cfg.scale;
    let a = render_frame(&upright(0.03, 0.0), &cfg);
    let b = render_frame(&upright(0.03 + step, 0.0), &cfg);
    for r in 0..cfg.height {
        for c in 1..cfg.width {
            assert_eq!(
                b[r * cfg.width + c],
                a[r * cfg.width + c - 1],
                "pixel ({r}, {c})"
            );
        }
    }
    let diff = render_encode(&upright(0.03, 0.0), &upright(0.03 + step, 0.0), &cfg).unwrap();
    let d = diff.as_slice();
    assert!(d.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(d.iter().any(|&v| v > 0.0) && d.iter().any(|&v| v < 0.0));
}

#[test]
fn balanced_episode_is_capped_at_two_hundred_steps() {
    let mut env = CartPole::new(ObsMode::State).unwrap();
    env.reset_to(upright(0.0, 0.0)).unwrap();
    let mut steps = 0;
    loop {
        let s = env.state();
        let push = s.theta + 0.5 * s.theta_dot + 0.05 * s.x + 0.1 * s.x_dot;
        let action = if push > 0.0 {
            Action::Right
        } else {
            Action::Left
        };
        let (_, res) = env.step(action).unwrap();
        steps += 1;
        if res.done {
            assert!(res.truncated, "fell after {steps} steps");
            break;
        }
    }
    assert_eq!(steps, MAX_STEPS);
    assert!(env.step(Action::Left).is_err());
}

#[test]
fn seeded_rollouts_are_identical() {
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = CartPole::new(ObsMode::Pixels(PixelConfig::default())).unwrap();
        let (_, mut obs) = env.reset(&mut rng).unwrap();
        let mut trace = vec![obs.clone()];
        while !env.is_done() {
            let a = Action::from_index(rng.random_range(0..2)).unwrap();
            obs = env.step(a).unwrap().1.obs;
            trace.push(obs.clone());
        }
        (trace, env.state())
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).1, run(5).1);
}

#[test]
fn step_applies_the_integrator() {
    let mut env = CartPole::new(ObsMode::State).unwrap();
    let s0 = CartpoleState {
        x: 0.1,
        x_dot: -0.2,
        theta: 0.03,
        theta_dot: 0.1,
    };
    env.reset_to(s0).unwrap();
    let (s1, res) = env.step(Action::Left).unwrap();
    assert_eq!(s1, integrate(s0, -10.0));
    assert_eq!(res.obs.as_slice(), &s1.to_array());
    assert_eq!(res.reward, 1.0);
}
