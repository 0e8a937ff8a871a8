//! Brute-force oracles for small instances. Nothing here calls into the
//! recursion or path code; the suites compare the two.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::paths::{Grid, StepPath};
use crate::recursion::{iterate_upsilon, iterate_v, iterate_w, Draws};
use crate::rng::{tagged, SimRng, Tag};

pub const MAX_LENGTH: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallInstance {
    pub length: usize,
    pub theta_draws: Vec<f64>,
    pub x_draws: Vec<f64>,
    pub n: u64,
    pub initial: f64,
}

impl SmallInstance {
    pub fn new(theta_draws: Vec<f64>, x_draws: Vec<f64>, n: u64, initial: f64) -> Result<Self> {
        let length = x_draws.len();
        if theta_draws.len() != length {
            return Err(Error::LengthMismatch {
                expected: length,
                got: theta_draws.len(),
            });
        }
        if length > MAX_LENGTH {
            return Err(Error::InvalidParameter(format!(
                "instance length {length} exceeds {MAX_LENGTH}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        Ok(SmallInstance {
            length,
            theta_draws,
            x_draws,
            n,
            initial,
        })
    }

    /// Random instance; small `n` makes negative coefficients common.
    pub fn random(rng: &mut SimRng) -> Self {
        let length = rng.random_range(1..=MAX_LENGTH);
        let n = rng.random_range(1..=20u64);
        let theta_mean = rng.random_range(-2.0..4.0);
        let theta_sd = rng.random_range(0.0..3.0);
        let x_mean = rng.random_range(-2.0..2.0);
        let x_sd = rng.random_range(0.1..3.0);
        let mut theta_draws = Vec::with_capacity(length);
        let mut x_draws = Vec::with_capacity(length);
        for _ in 0..length {
            let zt: f64 = rng.sample(StandardNormal);
            let zx: f64 = rng.sample(StandardNormal);
            theta_draws.push(theta_mean + theta_sd * zt);
            x_draws.push(x_mean + x_sd * zx);
        }
        let initial = rng.random_range(0.0..5.0);
        SmallInstance {
            length,
            theta_draws,
            x_draws,
            n,
            initial,
        }
    }

    fn c(&self, i: usize) -> f64 {
        1.0 - self.theta_draws[i] / self.n as f64
    }

    fn draws(&self) -> Draws {
        Draws {
            theta: self.theta_draws.clone(),
            x: self.x_draws.clone(),
        }
    }
}

/// `prod_{m=lo}^{hi} C_m`, empty product 1.
fn product(inst: &SmallInstance, lo: usize, hi_exclusive: usize) -> f64 {
    (lo..hi_exclusive).fold(1.0, |acc, m| acc * inst.c(m))
}

/// `V_i = X_{i-1} + C_{i-1} X_{i-2} + ... + C_{i-1}...C_1 X_0 + C_{i-1}...C_0 V_0`,
/// together with the sum of absolute terms.
fn expand_v_with_scale(inst: &SmallInstance, i: usize) -> (f64, f64) {
    let head = product(inst, 0, i) * inst.initial;
    let mut value = head;
    let mut scale = head.abs();
    for j in 0..i {
        let term = product(inst, j + 1, i) * inst.x_draws[j];
        value += term;
        scale += term.abs();
    }
    (value, scale)
}

/// `V_i` by the explicit product-sum expansion, `V_0 = initial`.
pub fn expand_v(inst: &SmallInstance, i: usize) -> f64 {
    expand_v_with_scale(inst, i).0
}

/// `Upsilon_i` as the max of 0 and every suffix product-sum; the longest
/// suffix carries `W_0`.
pub fn expand_upsilon(inst: &SmallInstance, i: usize) -> f64 {
    if i == 0 {
        return inst.initial;
    }
    let mut best = 0.0_f64;
    // suffix starting at X_j for j >= 1
    for j in 1..i {
        let mut s = 0.0;
        for l in j..i {
            s += product(inst, l + 1, i) * inst.x_draws[l];
        }
        best = best.max(s);
    }
    best.max(expand_v(inst, i))
}

/// Reflected recursion by direct iteration, used for the `Upsilon >= W` check.
fn direct_w(inst: &SmallInstance) -> Vec<f64> {
    let mut w = vec![inst.initial];
    for i in 0..inst.length {
        let next = inst.c(i) * w[i] + inst.x_draws[i];
        w.push(if next > 0.0 { next } else { 0.0 });
    }
    w
}

/// Saturates `u_{k+1} = (1 + alpha) u_k + b_k` and checks
/// `u_k <= e^{k alpha} (u_0 + sum_{j<k} b_j)` at every `k`.
///
/// The bound needs `u_0 >= 0`: for negative `u_0` the factor `(1+alpha)^k`
/// shrinks `|u_0|` less than `e^{k alpha}` does and the check returns false.
pub fn gronwall_check(u0: f64, alpha: f64, b_seq: &[f64]) -> bool {
    if alpha < 0.0 || b_seq.iter().any(|&b| b < 0.0) {
        return false;
    }
    let mut u = u0;
    let mut b_sum = 0.0;
    for (k, &b) in b_seq.iter().enumerate() {
        u = (1.0 + alpha) * u + b;
        b_sum += b;
        let growth = ((k + 1) as f64 * alpha).exp();
        let bound = growth * u0 + growth * b_sum;
        if u > bound + 1e-12 * bound.abs() {
            return false;
        }
    }
    true
}

/// `sup_{t <= T} |(1/n) sum_{i < floor(nt)} x_i - mu t|`, checking both ends
/// of every cell.
pub fn partial_sum_sup_error(x: &[f64], n: u64, mu: f64, horizon: f64) -> f64 {
    let nf = n as f64;
    let mut s = 0.0;
    let mut err = 0.0_f64;
    for k in 0..=x.len() {
        let left = k as f64 / nf;
        let right = ((k + 1) as f64 / nf).min(horizon);
        err = err.max((s - mu * left).abs()).max((s - mu * right).abs());
        if k < x.len() {
            s += x[k] / nf;
        }
    }
    err
}

/// `mu_n = mu + shift / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FwllnRow {
    pub n: u64,
    pub median_sup_error: f64,
    pub mean_sup_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwllnReport {
    pub rows: Vec<FwllnRow>,
    pub decreasing: bool,
}

/// Partial sums of the triangular array `X_{n,i} = Y - E Y + mu + shift/sqrt(n)`
/// against `mu t`.
pub fn fwlln_check(
    law: &DistributionSpec,
    mu: f64,
    shift: f64,
    horizon: f64,
    n_ladder: &[u64],
    reps: usize,
    seed: u64,
) -> Result<FwllnReport> {
    if n_ladder.is_empty() || reps == 0 {
        return Err(Error::InvalidParameter("empty ladder or zero reps".into()));
    }
    let rows: Vec<FwllnRow> = n_ladder
        .iter()
        .map(|&n| {
            let steps = (n as f64 * horizon + 1e-9).floor() as usize;
            let mean_n = mu + shift / (n as f64).sqrt() - law.mean();
            let mut errs: Vec<f64> = (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = tagged(seed ^ n, Tag::Oracle, rep);
                    let x: Vec<f64> = (0..steps).map(|_| law.sample(&mut rng) + mean_n).collect();
                    partial_sum_sup_error(&x, n, mu, horizon)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            let mid = errs.len() / 2;
            let median = if errs.len() % 2 == 1 {
                errs[mid]
            } else {
                0.5 * (errs[mid - 1] + errs[mid])
            };
            FwllnRow {
                n,
                median_sup_error: median,
                mean_sup_error: errs.iter().sum::<f64>() / errs.len() as f64,
            }
        })
        .collect();
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].median_sup_error <= w[0].median_sup_error);
    Ok(FwllnReport { rows, decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub suite: String,
    pub instances: usize,
    pub failures: usize,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn status(&self) -> &'static str {
        if self.passed() {
            "pass"
        } else {
            "fail"
        }
    }
}

const REL_TOL: f64 = 1e-12;

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= REL_TOL * (1.0 + scale.abs().max(a.abs()).max(b.abs()))
}

fn instance(seed: u64, idx: usize) -> SmallInstance {
    SmallInstance::random(&mut tagged(seed, Tag::Oracle, idx as u64))
}

/// `V` expansion against the iterative recursion at every index.
pub fn check_expand_v(inst: &SmallInstance) -> bool {
    let Ok(v) = iterate_v(inst.initial, inst.n, &inst.draws()) else {
        return false;
    };
    (0..=inst.length).all(|i| {
        let (e, scale) = expand_v_with_scale(inst, i);
        close(e, v[i], scale)
    })
}

/// `Upsilon` expansion against the bounding recursion, `Upsilon >= W`, and
/// equality with `W` when no coefficient is negative.
pub fn check_expand_upsilon(inst: &SmallInstance) -> bool {
    let draws = inst.draws();
    let ups = iterate_upsilon(inst.initial, inst.n, &draws);
    let Ok((w, _)) = iterate_w(inst.initial, inst.n, &draws) else {
        return false;
    };
    let w_direct = direct_w(inst);
    let nonneg = (0..inst.length).all(|i| inst.c(i) >= 0.0);
    (0..=inst.length).all(|i| {
        let e = expand_upsilon(inst, i);
        let scale = expand_v_with_scale(inst, i).1;
        close(e, ups[i], scale)
            && close(w[i], w_direct[i], scale)
            && e >= w[i] - REL_TOL * (1.0 + scale)
            && (!nonneg || close(e, w[i], scale))
    })
}

fn check_gronwall(rng: &mut SimRng) -> bool {
    let len = rng.random_range(1..=50);
    let u0 = rng.random_range(0.0..10.0);
    let alpha = rng.random_range(0.0..0.5);
    let b: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
    gronwall_check(u0, alpha, &b)
}

/// Oracle partial-sum error against the same quantity read off the main
/// recursion (`C = 1`, `V_0 = 0`) and a step path.
fn check_fwlln(rng: &mut SimRng) -> bool {
    let n = rng.random_range(1..=64u64);
    let horizon = rng.random_range(1..=3 * n) as f64 / n as f64;
    let mu = rng.random_range(-2.0..2.0);
    let Ok(grid) = Grid::for_level(n, horizon) else {
        return false;
    };
    let x: Vec<f64> = (0..grid.steps())
        .map(|_| mu + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let oracle = partial_sum_sup_error(&x, n, mu, horizon);
    let draws = Draws {
        theta: vec![0.0; x.len()],
        x: x.clone(),
    };
    let Ok(v) = iterate_v(0.0, n, &draws) else {
        return false;
    };
    let nf = n as f64;
    let Ok(path) = StepPath::new(grid, v.iter().map(|s| s / nf).collect()) else {
        return false;
    };
    // the step value on cell k is compared with mu t at both ends of the cell
    let mut main = 0.0_f64;
    for k in 0..grid.nodes() {
        let s = path.values()[k];
        let left = k as f64 / nf;
        let right = ((k + 1) as f64 / nf).min(horizon);
        main = main.max((s - mu * left).abs()).max((s - mu * right).abs());
    }
    let deterministic = vec![mu; x.len()];
    close(oracle, main, 1.0 + horizon * mu.abs())
        && partial_sum_sup_error(&deterministic, n, mu, horizon) <= mu.abs() / nf + 1e-12
}

pub const DEFAULT_INSTANCES: usize = 1000;

/// Runs every oracle suite on `instances` random cases each.
pub fn run_suite(instances: usize, seed: u64) -> Vec<SuiteRow> {
    let count = |f: &(dyn Fn(usize) -> bool + Sync)| {
        (0..instances).into_par_iter().filter(|&i| !f(i)).count()
    };
    let row = |name: &str, failures: usize| SuiteRow {
        suite: name.to_string(),
        instances,
        failures,
    };
    vec![
        row("expand_v", count(&|i| check_expand_v(&instance(seed, i)))),
        row("expand_upsilon", count(&|i| check_expand_upsilon(&instance(seed, i)))),
        row(
            "gronwall",
            count(&|i| check_gronwall(&mut tagged(seed ^ 0x9e37, Tag::Oracle, i as u64))),
        ),
        row(
            "fwlln",
            count(&|i| check_fwlln(&mut tagged(seed ^ 0x7f4a, Tag::Oracle, i as u64))),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(theta: &[f64], x: &[f64], n: u64, initial: f64) -> SmallInstance {
        SmallInstance::new(theta.to_vec(), x.to_vec(), n, initial).unwrap()
    }

    #[test]
    fn expand_v_examples() {
        let a = inst(&[2.0], &[0.5], 4, 3.0);
        assert_eq!(expand_v(&a, 1), 0.5 * 3.0 + 0.5);
        let ones = inst(&[0.0; 5], &[1.0, -2.0, 0.5, 0.25, 3.0], 7, 1.5);
        assert_eq!(expand_v(&ones, 5), 1.5 + 2.75);
        assert!(check_expand_v(&ones));
    }

    #[test]
    fn expand_upsilon_examples() {
        let neg = inst(&[0.0; 3], &[-1.0, -2.0, -0.5], 10, 0.0);
        assert_eq!(expand_upsilon(&neg, 3), 0.0);
        // C = 0.5 throughout: suffixes 2 and 0.5, full sum 0.75
        let one = inst(&[5.0; 3], &[1.0, -3.0, 2.0], 10, 0.0);
        assert_eq!(expand_upsilon(&one, 3), 2.0);
        assert!(check_expand_upsilon(&one));
    }

    #[test]
    fn upsilon_with_negative_coefficient() {
        // C_1 = -1 so a large negative X_0 turns into a large positive term
        let x = inst(&[0.0, 4.0], &[-5.0, 0.5], 2, 0.0);
        assert_eq!(expand_upsilon(&x, 2), 5.5);
        assert!(check_expand_upsilon(&x));
    }

    #[test]
    fn gronwall_examples() {
        assert!(gronwall_check(2.0, 0.0, &[0.0; 10]));
        assert!(gronwall_check(0.0, 0.0, &[0.0; 10]));
        assert!(gronwall_check(1.0, 0.1, &[1.0; 10]));
        let mut u = 1.0;
        for _ in 0..10 {
            u = 1.1 * u + 1.0;
        }
        assert!(u <= 1f64.exp() * (1.0 + 10.0));
        assert!(!gronwall_check(-1.0, 0.1, &[0.0; 5]));
        assert!(!gronwall_check(1.0, -0.1, &[0.0; 5]));
    }

    #[test]
    fn deterministic_partial_sums() {
        let x = vec![0.7; 30];
        assert!(partial_sum_sup_error(&x, 10, 0.7, 3.0) <= 0.07 + 1e-15);
    }

    #[test]
    fn fwlln_ladder_shrinks() {
        let law = DistributionSpec::normal(0.0, 1.0).unwrap();
        for shift in [0.0, 1.0] {
            let r = fwlln_check(&law, 0.5, shift, 1.0, &[100, 1000, 10000], 101, 3).unwrap();
            assert!(r.decreasing, "{r:?}");
            let ratio = r.rows[0].median_sup_error / r.rows[2].median_sup_error;
            assert!(ratio > 5.0 && ratio < 20.0, "{ratio}");
        }
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(SmallInstance::new(vec![0.0; 13], vec![0.0; 13], 1, 0.0).is_err());
        assert!(SmallInstance::new(vec![0.0; 2], vec![0.0; 3], 1, 0.0).is_err());
    }

    #[test]
    fn small_suite_passes() {
        for row in run_suite(200, 5) {
            assert!(row.passed(), "{row:?}");
        }
    }
}
