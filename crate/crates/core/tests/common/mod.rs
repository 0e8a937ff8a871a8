#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcqueue::ratefn::{RateCase, RateParams};
use rcqueue::{Grid, PiecewiseLinearPath, StepPath};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random walk with a nonnegative start, on `[0, T]` with at most `max_steps` cells.
pub fn random_step_path(rng: &mut ChaCha8Rng, max_steps: usize) -> StepPath {
    let steps = rng.random_range(1..=max_steps);
    let horizon = rng.random_range(0.1..2.0);
    let grid = Grid::new(horizon, steps).unwrap();
    let drift = rng.random_range(-3.0..3.0);
    let scale = rng.random_range(0.01..2.0);
    let mut v = rng.random_range(0.0..1.0);
    let mut values = vec![v];
    let dt = grid.dt();
    for _ in 0..steps {
        v += drift * dt + scale * dt.sqrt() * rng.random_range(-1.7..1.7);
        values.push(v);
    }
    StepPath::new(grid, values).unwrap()
}

/// Parameters valid for `case`.
pub fn random_rate_params(rng: &mut ChaCha8Rng, case: RateCase) -> RateParams {
    let theta_pos = rng.random_range(0.5..1.5);
    let theta_nonneg = if rng.random_bool(0.25) { 0.0 } else { theta_pos };
    let (mu, theta) = match case {
        RateCase::WPos => (rng.random_range(0.5..2.0), theta_pos),
        RateCase::VPos => {
            let m: f64 = rng.random_range(0.5..2.0);
            (if rng.random_bool(0.5) { m } else { -m }, theta_pos)
        }
        RateCase::WZero | RateCase::VZero => (0.0, theta_nonneg),
    };
    let initial = if case.is_reflected() {
        if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    } else {
        rng.random_range(-1.0..1.0)
    };
    RateParams {
        mu,
        theta,
        sigma_x: rng.random_range(0.5..1.5),
        sigma_theta: rng.random_range(0.0..1.0),
        r: rng.random_range(-1.0..1.0),
        initial,
    }
}

/// Piecewise-linear path through a handful of random knots starting at
/// `p.initial`. Reflected cases stay nonnegative; `w-zero` paths get exact
/// zero segments.
pub fn random_phi(rng: &mut ChaCha8Rng, case: RateCase, p: &RateParams, cells: usize) -> PiecewiseLinearPath {
    let grid = Grid::new(1.0, cells).unwrap();
    let knots_count = rng.random_range(3..=6);
    let mut idx: Vec<usize> = (0..knots_count).map(|_| rng.random_range(1..cells)).collect();
    idx.sort_unstable();
    idx.dedup();
    let mut knots = vec![(0, p.initial)];
    for &k in &idx {
        let v = match case {
            RateCase::WPos => rng.random_range(0.0..2.0),
            RateCase::WZero => {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random_range(0.0..2.0)
                }
            }
            RateCase::VPos | RateCase::VZero => rng.random_range(-2.0..2.0),
        };
        knots.push((k, v));
    }
    let last = match case {
        RateCase::WZero if rng.random_bool(0.3) => 0.0,
        RateCase::WPos | RateCase::WZero => rng.random_range(0.0..2.0),
        _ => rng.random_range(-2.0..2.0),
    };
    knots.push((cells, last));
    if case == RateCase::WZero && !knots.iter().skip(1).any(|&(_, v)| v == 0.0) {
        // force at least one zero stretch
        let k = knots.len() / 2;
        knots[k].1 = 0.0;
        if k + 1 < knots.len() - 1 {
            knots[k + 1].1 = 0.0;
        }
    }
    PiecewiseLinearPath::from_knots(grid, &knots).unwrap()
}
