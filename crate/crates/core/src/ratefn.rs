//! Moderate-deviation rate functions.
//!
//! Closed forms are evaluated by midpoint quadrature on piecewise-linear
//! paths: on cell `k` the integrand uses the cell slope and the midpoint
//! value. The variational oracle instead minimizes the contraction-principle
//! objective over per-cell perturbation slopes subject to the left-endpoint
//! discretization of the constraint map, so the two agree up to `O(dt)`.
//!
//! `+inf` (`f64::INFINITY`) marks paths outside the effective domain.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::{Grid, PiecewiseLinearPath, StepPath};
use crate::reflection::map_m;

/// Which rate function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateCase {
    /// Reflected process, `mu > 0`, `theta > 0`, centered at `mu/theta`.
    WPos,
    /// Reflected process, `mu = 0`, `theta >= 0`, centered at 0.
    WZero,
    /// Unreflected process, `theta > 0`, `mu != 0`, centered at `mu/theta`.
    VPos,
    /// Unreflected process, `mu = 0`, `theta >= 0`, centered at 0.
    VZero,
}

impl RateCase {
    pub const ALL: [RateCase; 4] = [RateCase::WPos, RateCase::WZero, RateCase::VPos, RateCase::VZero];

    pub fn is_reflected(self) -> bool {
        matches!(self, RateCase::WPos | RateCase::WZero)
    }

    pub fn center(self) -> Center {
        match self {
            RateCase::WPos | RateCase::VPos => Center::Positive,
            RateCase::WZero | RateCase::VZero => Center::Zero,
        }
    }
}

impl fmt::Display for RateCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RateCase::WPos => "w-pos",
            RateCase::WZero => "w-zero",
            RateCase::VPos => "v-pos",
            RateCase::VZero => "v-zero",
        };
        f.write_str(s)
    }
}

impl FromStr for RateCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w-pos" => Ok(RateCase::WPos),
            "w-zero" => Ok(RateCase::WZero),
            "v-pos" => Ok(RateCase::VPos),
            "v-zero" => Ok(RateCase::VZero),
            other => Err(Error::InvalidParameter(format!("unknown rate case `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    Positive,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateParams {
    pub mu: f64,
    pub theta: f64,
    pub sigma_x: f64,
    pub sigma_theta: f64,
    pub r: f64,
    /// Required starting value `phi(0)` (`w0` or `v0` at MD scale).
    pub initial: f64,
}

impl RateParams {
    pub fn validate(&self, case: RateCase) -> Result<()> {
        let all = [self.mu, self.theta, self.sigma_x, self.sigma_theta, self.r, self.initial];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("rate parameters must be finite".into()));
        }
        if self.sigma_x <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_x must be positive, got {}",
                self.sigma_x
            )));
        }
        if self.sigma_theta < 0.0 {
            return Err(Error::InvalidParameter("sigma_theta must be nonnegative".into()));
        }
        let ok = match case {
            RateCase::WPos => self.mu > 0.0 && self.theta > 0.0,
            RateCase::VPos => self.mu != 0.0 && self.theta > 0.0,
            RateCase::WZero | RateCase::VZero => self.mu == 0.0 && self.theta >= 0.0,
        };
        if !ok {
            return Err(Error::RegimeMismatch(format!(
                "{case} does not apply to mu = {}, theta = {}",
                self.mu, self.theta
            )));
        }
        if case.is_reflected() && self.initial < 0.0 {
            return Err(Error::NegativeStart(self.initial));
        }
        Ok(())
    }

    /// `theta^2 sigma_x^2 + mu^2 sigma_theta^2`.
    fn denom(&self) -> f64 {
        self.theta * self.theta * self.sigma_x * self.sigma_x
            + self.mu * self.mu * self.sigma_theta * self.sigma_theta
    }

    /// Weight in front of `int f^2` for the positive-center cases.
    pub fn positive_weight(&self) -> f64 {
        self.theta * self.theta / (2.0 * self.denom())
    }
}

fn starts_at(phi: &PiecewiseLinearPath, v: f64) -> bool {
    (phi.initial() - v).abs() <= 1e-12 * (1.0 + v.abs())
}

/// Threshold below which a value counts as zero.
pub fn eps_zero(phi: &PiecewiseLinearPath) -> f64 {
    1e-12 * (1.0 + phi.sup_norm())
}

fn has_negative(phi: &PiecewiseLinearPath) -> bool {
    let eps = eps_zero(phi);
    phi.node_values().iter().any(|&v| v < -eps)
}

/// Cell integrand `f_k = slope - r + theta * midpoint`.
fn midpoint_drift(phi: &PiecewiseLinearPath, p: &RateParams, k: usize) -> f64 {
    phi.slope(k) - p.r + p.theta * phi.midpoint(k)
}

/// `(1/(2 sigma^2)) int |phi'|^2` for `phi(0) = 0`, else `+inf`.
pub fn rate_rw(phi: &PiecewiseLinearPath, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if phi.initial() != 0.0 {
        return Ok(f64::INFINITY);
    }
    let dt = phi.grid().dt();
    let s: f64 = phi.slopes().map(|v| v * v).sum();
    Ok(s * dt / (2.0 * sigma * sigma))
}

/// Reflected, positive center.
pub fn rate_w_positive(phi: &PiecewiseLinearPath, p: &RateParams) -> Result<f64> {
    p.validate(RateCase::WPos)?;
    if !starts_at(phi, p.initial) || has_negative(phi) {
        return Ok(f64::INFINITY);
    }
    Ok(positive_form(phi, p))
}

fn positive_form(phi: &PiecewiseLinearPath, p: &RateParams) -> f64 {
    let dt = phi.grid().dt();
    let s: f64 = (0..phi.cells()).map(|k| midpoint_drift(phi, p, k).powi(2)).sum();
    p.positive_weight() * s * dt
}

/// Reflected, zero center.
pub fn rate_w_zero(phi: &PiecewiseLinearPath, p: &RateParams) -> Result<f64> {
    p.validate(RateCase::WZero)?;
    if !starts_at(phi, p.initial) || has_negative(phi) {
        return Ok(f64::INFINITY);
    }
    let dt = phi.grid().dt();
    let eps = eps_zero(phi);
    let k2 = 1.0 / (2.0 * p.sigma_x * p.sigma_x);
    let mut interior = 0.0;
    let mut zero_cells = 0usize;
    for k in 0..phi.cells() {
        if phi.midpoint(k) > eps {
            interior += midpoint_drift(phi, p, k).powi(2);
        } else {
            zero_cells += 1;
        }
    }
    let boundary = if p.r > 0.0 { p.r * p.r * zero_cells as f64 } else { 0.0 };
    Ok(k2 * dt * (interior + boundary))
}

/// Lebesgue measure of `{phi = 0}` by counting zero-midpoint cells.
pub fn zero_set_measure(phi: &PiecewiseLinearPath) -> f64 {
    let eps = eps_zero(phi);
    let dt = phi.grid().dt();
    (0..phi.cells()).filter(|&k| phi.midpoint(k) <= eps).count() as f64 * dt
}

/// `T` minus the measure of `{phi > 0}`. A nonnegative linear interpolant is
/// positive on the whole open cell as soon as one endpoint is positive.
pub fn zero_set_measure_by_complement(phi: &PiecewiseLinearPath) -> f64 {
    let dt = phi.grid().dt();
    let eps = eps_zero(phi);
    let v = phi.node_values();
    let positive = (0..phi.cells()).filter(|&k| v[k] > eps || v[k + 1] > eps).count();
    phi.grid().horizon() - positive as f64 * dt
}

/// Unreflected rate function; no sign constraint on `phi`.
pub fn rate_v(phi: &PiecewiseLinearPath, p: &RateParams, center: Center) -> Result<f64> {
    let case = match center {
        Center::Positive => RateCase::VPos,
        Center::Zero => RateCase::VZero,
    };
    p.validate(case)?;
    if !starts_at(phi, p.initial) {
        return Ok(f64::INFINITY);
    }
    match center {
        Center::Positive => Ok(positive_form(phi, p)),
        Center::Zero => {
            let dt = phi.grid().dt();
            let s: f64 = (0..phi.cells()).map(|k| midpoint_drift(phi, p, k).powi(2)).sum();
            Ok(s * dt / (2.0 * p.sigma_x * p.sigma_x))
        }
    }
}

/// Closed form for any case.
pub fn closed_form(phi: &PiecewiseLinearPath, p: &RateParams, case: RateCase) -> Result<f64> {
    match case {
        RateCase::WPos => rate_w_positive(phi, p),
        RateCase::WZero => rate_w_zero(phi, p),
        RateCase::VPos => rate_v(phi, p, Center::Positive),
        RateCase::VZero => rate_v(phi, p, Center::Zero),
    }
}

/// `(1/(2 sigma^2)) int |psi'|^2`; a zero path costs 0 even when `sigma = 0`.
pub fn quadratic_cost(psi: &PiecewiseLinearPath, sigma: f64) -> f64 {
    let dt = psi.grid().dt();
    let s: f64 = psi.slopes().map(|v| v * v).sum();
    if s == 0.0 {
        0.0
    } else if sigma == 0.0 {
        f64::INFINITY
    } else {
        s * dt / (2.0 * sigma * sigma)
    }
}

/// Minimizing perturbations for one path.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub psi1: PiecewiseLinearPath,
    pub psi2: PiecewiseLinearPath,
    /// Regulator, for the reflected zero-center case.
    pub y: Option<PiecewiseLinearPath>,
    /// `sup |phi - constraint map(phi's input)|` on the grid.
    pub constraint_residual: f64,
    /// Euler tolerance the residual is held to.
    pub residual_tolerance: f64,
}

impl Decomposition {
    pub fn cost(&self, p: &RateParams) -> f64 {
        quadratic_cost(&self.psi1, p.sigma_x) + quadratic_cost(&self.psi2, p.sigma_theta)
    }

    pub fn residual_ok(&self) -> bool {
        self.constraint_residual <= self.residual_tolerance
    }
}

fn euler_tolerance(phi: &PiecewiseLinearPath, theta: f64) -> f64 {
    let horizon = phi.grid().horizon();
    let max_slope = phi.slopes().fold(0.0_f64, |m, s| m.max(s.abs()));
    (theta.abs() * horizon).exp() * horizon * theta.abs() * phi.grid().dt() * max_slope / 2.0
        + 1e-10 * (1.0 + phi.sup_norm())
}

/// Closed-form optimal split `(psi1, psi2)` for the positive-center cases:
/// `psi1' = theta^2 sigma_x^2 f / D`, `psi2' = -mu theta sigma_theta^2 f / D`
/// with `f = phi' - r + theta phi`. The constraint
/// `phi = M_theta(phi(0) + psi1 - (mu/theta) psi2 + r t)` is certified with
/// [`map_m`].
pub fn optimal_decomposition(phi: &PiecewiseLinearPath, p: &RateParams) -> Result<Decomposition> {
    if !(p.theta > 0.0 && p.mu != 0.0) {
        return Err(Error::RegimeMismatch(
            "optimal decomposition needs a positive center (theta > 0, mu != 0)".into(),
        ));
    }
    p.validate(RateCase::VPos)?;
    let grid = *phi.grid();
    let d = p.denom();
    let f: Vec<f64> = (0..phi.cells()).map(|k| midpoint_drift(phi, p, k)).collect();
    let s1: Vec<f64> = f
        .iter()
        .map(|v| p.theta * p.theta * p.sigma_x * p.sigma_x * v / d)
        .collect();
    let s2: Vec<f64> = f
        .iter()
        .map(|v| -p.mu * p.theta * p.sigma_theta * p.sigma_theta * v / d)
        .collect();
    let psi1 = PiecewiseLinearPath::from_slopes(grid, 0.0, &s1)?;
    let psi2 = PiecewiseLinearPath::from_slopes(grid, 0.0, &s2)?;
    let ratio = p.mu / p.theta;
    let input: Vec<f64> = (0..grid.nodes())
        .map(|k| {
            phi.initial() + psi1.node_values()[k] - ratio * psi2.node_values()[k]
                + p.r * grid.time(k)
        })
        .collect();
    let u = map_m(&StepPath::new(grid, input)?, p.theta)?;
    let residual = u.sup_distance(&phi.to_step_path())?;
    Ok(Decomposition {
        psi1,
        psi2,
        y: None,
        constraint_residual: residual,
        residual_tolerance: euler_tolerance(phi, p.theta),
    })
}

/// Split for the reflected zero-center case: `psi1' = f` off the zero set;
/// on it `psi1' = -r - y'` with `y' = max(-r, 0)`.
pub fn reflected_decomposition(phi: &PiecewiseLinearPath, p: &RateParams) -> Result<Decomposition> {
    p.validate(RateCase::WZero)?;
    let grid = *phi.grid();
    let eps = eps_zero(phi);
    let mut s1 = Vec::with_capacity(phi.cells());
    let mut sy = Vec::with_capacity(phi.cells());
    for k in 0..phi.cells() {
        if phi.midpoint(k) > eps {
            s1.push(midpoint_drift(phi, p, k));
            sy.push(0.0);
        } else {
            let y = (-p.r).max(0.0);
            s1.push(-p.r - y);
            sy.push(y);
        }
    }
    let psi1 = PiecewiseLinearPath::from_slopes(grid, 0.0, &s1)?;
    let y = PiecewiseLinearPath::from_slopes(grid, 0.0, &sy)?;
    // phi = x - theta int phi + y with x = phi(0) + psi1 + r t.
    let input: Vec<f64> = (0..grid.nodes())
        .map(|k| phi.initial() + psi1.node_values()[k] + p.r * grid.time(k) + y.node_values()[k])
        .collect();
    let u = map_m(&StepPath::new(grid, input)?, p.theta)?;
    let residual = u.sup_distance(&phi.to_step_path())?;
    Ok(Decomposition {
        psi1,
        psi2: PiecewiseLinearPath::new(grid, vec![0.0; grid.nodes()])?,
        y: Some(y),
        constraint_residual: residual,
        residual_tolerance: euler_tolerance(phi, p.theta) + 2.0 * eps * grid.horizon(),
    })
}

/// Soft cap on oracle grid size.
pub const ORACLE_MAX_CELLS: usize = 4096;

/// Vertex of the parabola through `(-1, qm), (0, q0), (1, qp)`.
fn parabola_min(qm: f64, q0: f64, qp: f64) -> f64 {
    let curv = qm - 2.0 * q0 + qp;
    if curv <= 0.0 {
        return q0.min(qm).min(qp);
    }
    let s = (qm - qp) / (2.0 * curv);
    q0 + 0.5 * (qp - qm) * s + 0.5 * curv * s * s
}

/// Numerical minimizer of the contraction-principle objective on the grid.
///
/// For the `M_theta` cases the discrete constraint
/// `phi_{k+1} - phi_k = dt (s1_k - (mu/theta) s2_k + r) - theta dt phi_k`
/// fixes `s1_k` given `s2_k`, leaving one scalar quadratic per cell, which
/// is minimized from three evaluations. For the reflected case a cell ending
/// at zero may carry regulator mass `lambda >= 0`, so
/// `s1_k = f_k - lambda`; the projected minimizer `lambda = max(f_k, 0)` is
/// compared with a grid search over `lambda`.
pub fn variational_oracle(phi: &PiecewiseLinearPath, p: &RateParams, case: RateCase) -> Result<f64> {
    p.validate(case)?;
    if phi.cells() > ORACLE_MAX_CELLS {
        return Err(Error::Precondition(format!(
            "oracle grid has {} cells, cap is {ORACLE_MAX_CELLS}",
            phi.cells()
        )));
    }
    if !starts_at(phi, p.initial) || (case.is_reflected() && has_negative(phi)) {
        return Ok(f64::INFINITY);
    }
    let dt = phi.grid().dt();
    let v = phi.node_values();
    let kx = 1.0 / (2.0 * p.sigma_x * p.sigma_x);
    let euler_f = |k: usize| phi.slope(k) - p.r + p.theta * v[k];
    let mut total = 0.0;
    match case {
        RateCase::WPos | RateCase::VPos => {
            let ratio = p.mu / p.theta;
            for k in 0..phi.cells() {
                let f = euler_f(k);
                let cell = if p.sigma_theta == 0.0 {
                    kx * f * f
                } else {
                    let kt = 1.0 / (2.0 * p.sigma_theta * p.sigma_theta);
                    let q = |s2: f64| kx * (f + ratio * s2).powi(2) + kt * s2 * s2;
                    parabola_min(q(-1.0), q(0.0), q(1.0))
                };
                total += cell;
            }
        }
        RateCase::VZero => {
            for k in 0..phi.cells() {
                total += kx * euler_f(k).powi(2);
            }
        }
        RateCase::WZero => {
            let eps = eps_zero(phi);
            for k in 0..phi.cells() {
                let f = euler_f(k);
                if v[k + 1] > eps {
                    total += kx * f * f;
                    continue;
                }
                let projected = f.min(0.0).powi(2);
                let searched = grid_search_regulator(f);
                if searched < projected - 1e-12 * (1.0 + projected) {
                    return Err(Error::NoConvergence {
                        method: "regulator projection",
                        iterations: 1,
                        residual: projected - searched,
                    });
                }
                total += kx * projected;
            }
        }
    }
    Ok(total * dt)
}

/// `min_{lambda >= 0} (f - lambda)^2` by a coarse grid plus one refinement.
fn grid_search_regulator(f: f64) -> f64 {
    let span = 2.0 * f.abs() + 1.0;
    let coarse = 400;
    let eval = |l: f64| (f - l).powi(2);
    let mut best_l = 0.0;
    let mut best = eval(0.0);
    for i in 1..=coarse {
        let l = span * i as f64 / coarse as f64;
        let v = eval(l);
        if v < best {
            best = v;
            best_l = l;
        }
    }
    let h = span / coarse as f64;
    for i in 0..=400 {
        let l = (best_l - h + 2.0 * h * i as f64 / 400.0).max(0.0);
        best = best.min(eval(l));
    }
    best
}

/// Closed form, oracle and decomposition for one path.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub case: RateCase,
    pub value_closed_form: f64,
    pub value_variational: f64,
    pub decomposition: Option<Decomposition>,
    /// `|closed - oracle| / max(closed, tiny)`.
    pub gap: f64,
}

pub fn rate_report(phi: &PiecewiseLinearPath, p: &RateParams, case: RateCase) -> Result<RateReport> {
    let closed = closed_form(phi, p, case)?;
    let oracle = variational_oracle(phi, p, case)?;
    let gap = if closed.is_infinite() && oracle.is_infinite() {
        0.0
    } else {
        (closed - oracle).abs() / closed.abs().max(1e-300)
    };
    let decomposition = if closed.is_finite() {
        match case {
            RateCase::WPos | RateCase::VPos => Some(optimal_decomposition(phi, p)?),
            RateCase::WZero => Some(reflected_decomposition(phi, p)?),
            RateCase::VZero => None,
        }
    } else {
        None
    };
    Ok(RateReport {
        case,
        value_closed_form: closed,
        value_variational: oracle,
        decomposition,
        gap,
    })
}

/// Which discretization a zero-cost path should be exact for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `slope + theta * midpoint = r` on every cell (closed forms).
    Midpoint,
    /// `slope + theta * left value = r` on every cell (oracle).
    Euler,
}

/// Path with `phi' = r - theta phi`, `phi(0) = initial`, exact for `scheme`.
pub fn zero_cost_path(p: &RateParams, grid: Grid, scheme: Scheme) -> Result<PiecewiseLinearPath> {
    let dt = grid.dt();
    let mut v = Vec::with_capacity(grid.nodes());
    let mut cur = p.initial;
    v.push(cur);
    for _ in 0..grid.steps() {
        cur = match scheme {
            Scheme::Midpoint => (cur * (1.0 / dt - p.theta / 2.0) + p.r) / (1.0 / dt + p.theta / 2.0),
            Scheme::Euler => cur + dt * (p.r - p.theta * cur),
        };
        v.push(cur);
    }
    PiecewiseLinearPath::new(grid, v)
}
