//! Fluid limits, fixed-point stability and convergence diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::ModelParams;
use crate::error::{Error, Result};
use crate::paths::{Grid, StepPath};
use crate::recursion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Load {
    Overloaded,
    Critical,
    Underloaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Pos,
    Zero,
    Neg,
}

impl Sign {
    fn of(v: f64) -> Self {
        if v > 0.0 {
            Sign::Pos
        } else if v < 0.0 {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable(f64),
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeClassification {
    pub load: Load,
    pub theta_sign: Sign,
    pub stability: Stability,
    /// Set when stability of the reported point depends on the start.
    pub initial_condition_dependent: bool,
    /// A fixed point that exists but is not stable.
    pub unstable_fixed_point: Option<f64>,
}

impl RegimeClassification {
    pub fn stable_point(&self) -> Option<f64> {
        match self.stability {
            Stability::Stable(v) => Some(v),
            Stability::Unstable => None,
        }
    }

    fn new(mu: f64, theta: f64, stability: Stability) -> Self {
        let load = match Sign::of(mu) {
            Sign::Pos => Load::Overloaded,
            Sign::Zero => Load::Critical,
            Sign::Neg => Load::Underloaded,
        };
        Self {
            load,
            theta_sign: Sign::of(theta),
            stability,
            initial_condition_dependent: false,
            unstable_fixed_point: None,
        }
    }
}

/// Stable fixed point of the reflected fluid limit.
pub fn classify_w(mu: f64, theta: f64) -> RegimeClassification {
    use Sign::*;
    let stability = match (Sign::of(theta), Sign::of(mu)) {
        (Pos, Pos) => Stability::Stable(mu / theta),
        (Pos, _) => Stability::Stable(0.0),
        (Zero, Pos) => Stability::Unstable,
        (Zero, _) => Stability::Stable(0.0),
        (Neg, Neg) => Stability::Stable(0.0),
        (Neg, _) => Stability::Unstable,
    };
    let mut c = RegimeClassification::new(mu, theta, stability);
    if theta < 0.0 && mu < 0.0 {
        // Paths started above mu/theta escape; below it they drain to 0.
        c.initial_condition_dependent = true;
        c.unstable_fixed_point = Some(mu / theta);
    }
    c
}

/// Stable fixed point of the unreflected fluid limit.
pub fn classify_v(mu: f64, theta: f64) -> RegimeClassification {
    let stability = if theta > 0.0 {
        Stability::Stable(mu / theta)
    } else if theta == 0.0 && mu == 0.0 {
        Stability::Stable(0.0)
    } else {
        Stability::Unstable
    };
    let mut c = RegimeClassification::new(mu, theta, stability);
    if theta < 0.0 {
        c.unstable_fixed_point = Some(mu / theta);
    }
    c
}

/// Unreflected fluid value `mu/theta + (v0 - mu/theta) e^{-theta t}`.
pub fn fluid_v_at(mu: f64, theta: f64, v0: f64, t: f64) -> f64 {
    if theta == 0.0 {
        v0 + mu * t
    } else {
        let fp = mu / theta;
        fp + (v0 - fp) * (-theta * t).exp()
    }
}

/// Reflected fluid value: the unreflected solution until it hits zero,
/// then zero (only possible when `mu < 0`, where zero is absorbing).
pub fn fluid_w_at(mu: f64, theta: f64, w0: f64, t: f64) -> f64 {
    fluid_v_at(mu, theta, w0, t).max(0.0)
}

/// First time the reflected fluid path reaches zero, if it ever does from
/// `w0 > 0`.
pub fn hitting_time(mu: f64, theta: f64, w0: f64) -> Option<f64> {
    if mu >= 0.0 {
        return None;
    }
    if w0 <= 0.0 {
        return Some(0.0);
    }
    if theta == 0.0 {
        return Some(-w0 / mu);
    }
    let fp = mu / theta;
    let ratio = (fp - w0) / fp;
    if ratio > 0.0 && (theta > 0.0 || w0 < fp) {
        Some(ratio.ln() / theta)
    } else {
        None
    }
}

pub fn fluid_w(mu: f64, theta: f64, w0: f64, grid: Grid) -> Result<StepPath> {
    if w0 < 0.0 {
        return Err(Error::NegativeStart(w0));
    }
    StepPath::from_fn(grid, |t| fluid_w_at(mu, theta, w0, t))
}

pub fn fluid_v(mu: f64, theta: f64, v0: f64, grid: Grid) -> Result<StepPath> {
    StepPath::from_fn(grid, |t| fluid_v_at(mu, theta, v0, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    W,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub mean_sup_error: f64,
    pub se: f64,
    pub q50: f64,
    pub q90: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sup-distance between the simulated fluid view and the closed form along an
/// `n` ladder.
pub fn fluid_convergence_report(
    params: &ModelParams,
    process: Process,
    n_ladder: &[u64],
    reps: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("n ladder must be ascending".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let (mu, theta, w0) = (params.mu, params.theta(), params.w0);
    n_ladder
        .iter()
        .map(|&n| {
            let mut errors = (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let fluid = match process {
                        Process::W => recursion::simulate_w_rep(params, n, seed, rep)?.fluid_view,
                        Process::V => recursion::simulate_v_rep(params, n, seed, rep, w0)?.fluid_view,
                    };
                    let grid = *fluid.grid();
                    let exact = match process {
                        Process::W => fluid_w(mu, theta, w0, grid)?,
                        Process::V => fluid_v(mu, theta, w0, grid)?,
                    };
                    fluid.sup_distance(&exact)
                })
                .collect::<Result<Vec<f64>>>()?;
            let k = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / k;
            let var = if errors.len() > 1 {
                errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            errors.sort_by(f64::total_cmp);
            Ok(ConvergenceRow {
                n,
                mean_sup_error: mean,
                se: (var / k).sqrt(),
                q50: quantile(&errors, 0.5),
                q90: quantile(&errors, 0.9),
            })
        })
        .collect()
}

/// Whether mean errors are nonincreasing along the ladder up to the standard
/// errors of the two rungs compared.
pub fn is_nonincreasing(rows: &[ConvergenceRow]) -> bool {
    rows.windows(2).all(|w| {
        let slack = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        w[1].mean_sup_error <= w[0].mean_sup_error + slack
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one() {
        let s = |mu: f64, th: f64| classify_w(mu, th).stable_point();
        assert_eq!(s(1.0, 2.0), Some(0.5));
        assert_eq!(s(0.0, 2.0), Some(0.0));
        assert_eq!(s(-1.0, 2.0), Some(0.0));
        assert_eq!(s(1.0, 0.0), None);
        assert_eq!(s(0.0, 0.0), Some(0.0));
        assert_eq!(s(-1.0, 0.0), Some(0.0));
        assert_eq!(s(1.0, -2.0), None);
        assert_eq!(s(0.0, -2.0), None);
        assert_eq!(s(-1.0, -2.0), Some(0.0));
        let c = classify_w(-1.0, -2.0);
        assert!(c.initial_condition_dependent);
        assert_eq!(c.unstable_fixed_point, Some(0.5));
        assert_eq!(c.load, Load::Underloaded);
        assert!(!classify_w(-1.0, 2.0).initial_condition_dependent);
    }

    #[test]
    fn table_two() {
        let s = |mu: f64, th: f64| classify_v(mu, th).stable_point();
        assert_eq!(s(1.0, 2.0), Some(0.5));
        assert_eq!(s(0.0, 1.0), Some(0.0));
        assert_eq!(s(-1.0, 2.0), Some(-0.5));
        assert_eq!(s(1.0, 0.0), None);
        assert_eq!(s(0.0, 0.0), Some(0.0));
        assert_eq!(s(-1.0, 0.0), None);
        for mu in [1.0, 0.0, -1.0] {
            assert_eq!(s(mu, -1.0), None);
        }
    }

    #[test]
    fn closed_form_examples() {
        let grid = Grid::new(2.0, 200).unwrap();
        let p = fluid_w(1.0, 2.0, 0.0, grid).unwrap();
        for (k, v) in p.values().iter().enumerate() {
            let t = grid.time(k);
            assert!((v - 0.5 * (1.0 - (-2.0 * t).exp())).abs() < 1e-15);
        }
        assert_eq!(fluid_w(0.0, 3.0, 0.0, grid).unwrap().sup_norm(), 0.0);
        assert_eq!(fluid_w(0.0, -3.0, 0.0, grid).unwrap().sup_norm(), 0.0);
        let v = fluid_v(2.0, 1.0, 0.0, grid).unwrap();
        assert!((v.last() - 2.0 * (1.0 - (-2.0_f64).exp())).abs() < 1e-14);
        let flat = fluid_v(3.0, 2.0, 1.5, grid).unwrap();
        assert!(flat.values().iter().all(|&x| (x - 1.5).abs() < 1e-15));
        assert!((fluid_v(-1.5, 0.0, 1.0, grid).unwrap().last() - (1.0 - 3.0)).abs() < 1e-15);
        assert!(fluid_w(1.0, 1.0, -0.1, grid).is_err());
    }

    fn bisect_zero(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn hitting_time_matches_root_finding() {
        let t0 = hitting_time(-1.0, 1.0, 2.0).unwrap();
        assert!((t0 - 3.0_f64.ln()).abs() < 1e-15);
        for &(mu, theta, w0) in &[(-1.0, 1.0, 2.0), (-0.5, 3.0, 0.7), (-2.0, -1.0, 1.0), (-1.0, 0.0, 1.5)] {
            let root = bisect_zero(|t| fluid_v_at(mu, theta, w0, t), 0.0, 50.0);
            let t0 = hitting_time(mu, theta, w0).unwrap();
            assert!((t0 - root).abs() < 1e-10, "{mu} {theta} {w0}: {t0} vs {root}");
        }
        assert_eq!(hitting_time(1.0, 1.0, 1.0), None);
        assert_eq!(hitting_time(-1.0, -1.0, 2.0), None);
        assert_eq!(hitting_time(0.0, 1.0, 1.0), None);
    }

    #[test]
    fn first_zero_index_is_within_one_cell_of_hitting_time() {
        for &(mu, theta, w0) in &[(-1.0, 1.0, 2.0), (-2.0, -1.0, 1.0), (-1.0, 0.0, 1.5), (-0.3, 2.0, 0.4)] {
            let grid = Grid::new(6.0, 1200).unwrap();
            let p = fluid_w(mu, theta, w0, grid).unwrap();
            let t0 = hitting_time(mu, theta, w0).unwrap();
            let k = p.values().iter().position(|&v| v < 1e-10).unwrap();
            assert!((grid.time(k) - t0).abs() <= grid.dt() + 1e-12);
            assert!(p.is_nonnegative());
        }
    }

    #[test]
    fn ode_residual_where_positive() {
        for &(mu, theta, w0) in &[(1.0, 2.0, 0.0), (-1.0, 1.0, 2.0), (1.0, -0.5, 0.3), (0.0, 1.0, 1.0)] {
            let grid = Grid::new(3.0, 3000).unwrap();
            let p = fluid_w(mu, theta, w0, grid).unwrap();
            let v = p.values();
            let dt = grid.dt();
            for k in 0..grid.steps() {
                if v[k] > 1e-9 && v[k + 1] > 1e-9 {
                    let deriv = (v[k + 1] - v[k]) / dt;
                    let mid = 0.5 * (v[k] + v[k + 1]);
                    let scale = 1.0 + mu.abs() + theta.abs() * (1.0 + mid);
                    assert!((deriv + theta * mid - mu).abs() < 1e-4 * scale * scale);
                }
            }
        }
    }

    #[test]
    fn fluid_w_equals_reflected_linear_drive() {
        use crate::reflection::reflect_theta;
        for &(mu, theta, w0) in &[(1.0, 2.0, 0.0), (-1.0, 1.0, 2.0), (0.5, 0.0, 0.1), (-1.0, 0.0, 1.0), (-1.0, -0.5, 1.0), (1.0, -0.5, 0.0)] {
            let grid = Grid::new(2.0, 4000).unwrap();
            let x = StepPath::from_fn(grid, |t| w0 + mu * t).unwrap();
            let z = reflect_theta(&x, theta).unwrap().z;
            let f = fluid_w(mu, theta, w0, grid).unwrap();
            let scale = (mu.abs() + theta.abs() * f.sup_norm()) * (theta.abs() * 2.0).exp();
            assert!(z.sup_distance(&f).unwrap() <= 2.0 * grid.dt() * (1.0 + scale));
        }
    }
}
