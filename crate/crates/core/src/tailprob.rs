//! Empirical decay rates `-(1/b_n^2) log P(event)` along an `n` ladder,
//! compared with rate-function infima.

use serde::Serialize;

use crate::distributions::ModelParams;
use crate::error::{Error, Result};
use crate::paths::{Grid, PiecewiseLinearPath};
use crate::ratefn::{closed_form, variational_oracle, RateCase, RateParams, ORACLE_MAX_CELLS};
use crate::recursion::{md_tail_sample_with, Estimator, TailEvent, TailOptions, TailSample};

/// Weight `k` in `I(phi) = k int (phi' - r + theta phi)^2`.
fn weight(p: &RateParams, case: RateCase) -> f64 {
    match case {
        RateCase::WPos | RateCase::VPos => p.positive_weight(),
        RateCase::WZero | RateCase::VZero => 1.0 / (2.0 * p.sigma_x * p.sigma_x),
    }
}

/// Endpoint of the zero-cost path at `horizon`.
pub fn zero_cost_endpoint(p: &RateParams, horizon: f64) -> f64 {
    if p.theta == 0.0 {
        p.initial + p.r * horizon
    } else {
        let e = (-p.theta * horizon).exp();
        p.r / p.theta * (1.0 - e) + e * p.initial
    }
}

/// `inf { I(phi) : phi(T) >= a }` from the explicit Euler–Lagrange solution,
/// ignoring the sign constraint of the reflected cases.
pub fn endpoint_target_analytic(p: &RateParams, a: f64, case: RateCase, horizon: f64) -> Result<f64> {
    p.validate(case)?;
    if !(horizon > 0.0 && horizon.is_finite()) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need finite a and positive horizon, got a = {a}, T = {horizon}"
        )));
    }
    let gap = a - zero_cost_endpoint(p, horizon);
    if gap <= 0.0 {
        return Ok(0.0);
    }
    let k = weight(p, case);
    let th = p.theta;
    let inv_gain = if th.abs() * horizon < 1e-10 {
        1.0 / horizon
    } else {
        2.0 * th / (1.0 - (-2.0 * th * horizon).exp())
    };
    Ok(k * gap * gap * inv_gain)
}

/// Minimizer over piecewise-linear paths on `cells` cells with both ends
/// pinned, for the midpoint-quadrature objective. Solves the tridiagonal
/// normal equations directly.
pub fn pinned_minimizer(
    p: &RateParams,
    a: f64,
    horizon: f64,
    cells: usize,
) -> Result<PiecewiseLinearPath> {
    let grid = Grid::new(horizon, cells)?;
    let dt = grid.dt();
    let alpha = 1.0 / dt + p.theta / 2.0;
    let gamma = 1.0 / dt - p.theta / 2.0;
    let mut v = vec![0.0; cells + 1];
    v[0] = p.initial;
    v[cells] = a;
    let m = cells - 1;
    if m > 0 {
        // -ag v_{j-1} + (a^2 + g^2) v_j - ag v_{j+1} = r (a - g)
        let off = -alpha * gamma;
        let diag = alpha * alpha + gamma * gamma;
        let mut rhs = vec![p.r * (alpha - gamma); m];
        rhs[0] -= off * v[0];
        rhs[m - 1] -= off * v[cells];
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        c[0] = off / diag;
        d[0] = rhs[0] / diag;
        for j in 1..m {
            let den = diag - off * c[j - 1];
            c[j] = off / den;
            d[j] = (rhs[j] - off * d[j - 1]) / den;
        }
        v[m] = d[m - 1];
        for j in (0..m - 1).rev() {
            v[j + 1] = d[j] - c[j] * v[j + 2];
        }
    }
    PiecewiseLinearPath::new(grid, v)
}

/// Both routes to the endpoint infimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointTarget {
    pub analytic: f64,
    /// Closed form evaluated on the discrete minimizer.
    pub numeric: f64,
    /// Variational oracle on the same path.
    pub oracle: f64,
    pub cells: usize,
}

pub const DEFAULT_TARGET_CELLS: usize = 400;

/// `inf { I(phi) : phi(T) >= a }`.
pub fn endpoint_target(p: &RateParams, a: f64, case: RateCase, horizon: f64) -> Result<f64> {
    Ok(endpoint_target_report(p, a, case, horizon, DEFAULT_TARGET_CELLS)?.numeric)
}

pub fn endpoint_target_report(
    p: &RateParams,
    a: f64,
    case: RateCase,
    horizon: f64,
    cells: usize,
) -> Result<EndpointTarget> {
    let analytic = endpoint_target_analytic(p, a, case, horizon)?;
    if cells == 0 || cells > ORACLE_MAX_CELLS {
        return Err(Error::InvalidParameter(format!(
            "cells must be in 1..={ORACLE_MAX_CELLS}, got {cells}"
        )));
    }
    if analytic == 0.0 {
        return Ok(EndpointTarget {
            analytic,
            numeric: 0.0,
            oracle: 0.0,
            cells,
        });
    }
    let phi = pinned_minimizer(p, a, horizon, cells)?;
    if case.is_reflected() && phi.node_values().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition(
            "the unconstrained minimizer goes negative; the sign constraint binds".into(),
        ));
    }
    let numeric = closed_form(&phi, p, case)?;
    let oracle = variational_oracle(&phi, p, case)?;
    if !(numeric.is_finite() && oracle.is_finite()) {
        return Err(Error::NoConvergence {
            method: "endpoint minimizer",
            iterations: 1,
            residual: f64::INFINITY,
        });
    }
    Ok(EndpointTarget {
        analytic,
        numeric,
        oracle,
        cells,
    })
}

/// `inf { I(phi) : sup phi >= a }`: reach `a` at some `s <= T`, then follow
/// the zero-cost flow.
pub fn sup_target(p: &RateParams, a: f64, case: RateCase, horizon: f64) -> Result<f64> {
    if p.initial >= a {
        p.validate(case)?;
        return Ok(0.0);
    }
    const SAMPLES: usize = 2000;
    let mut best = f64::INFINITY;
    for i in 1..=SAMPLES {
        let s = horizon * i as f64 / SAMPLES as f64;
        best = best.min(endpoint_target_analytic(p, a, case, s)?);
    }
    Ok(best)
}

/// Rate-function case matching the simulated (reflected) queue.
pub fn rate_case_for(params: &ModelParams) -> Result<RateCase> {
    let (mu, theta) = (params.mu, params.theta());
    if mu > 0.0 && theta > 0.0 {
        Ok(RateCase::WPos)
    } else if mu == 0.0 && theta >= 0.0 {
        Ok(RateCase::WZero)
    } else {
        Err(Error::RegimeMismatch(format!(
            "no moderate-deviation rate for mu = {mu}, theta = {theta}"
        )))
    }
}

pub fn rate_params_for(params: &ModelParams) -> RateParams {
    RateParams {
        mu: params.mu,
        theta: params.theta(),
        sigma_x: params.sigma_x(),
        sigma_theta: params.sigma_theta(),
        r: params.r,
        initial: params.md_offset,
    }
}

pub fn event_target(params: &ModelParams, event: TailEvent) -> Result<f64> {
    let case = rate_case_for(params)?;
    let p = rate_params_for(params);
    match event {
        TailEvent::EndpointExceed(a) => endpoint_target(&p, a, case, params.horizon),
        TailEvent::SupExceed(a) => sup_target(&p, a, case, params.horizon),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    /// Distance to the target shrinks at every rung.
    TowardTarget,
    AwayFromTarget,
    Mixed,
    /// Fewer than two uncensored rungs, or no target.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub event: TailEvent,
    pub estimator: Estimator,
    pub n_ladder: Vec<u64>,
    pub b_n: Vec<f64>,
    pub p_hats: Vec<f64>,
    pub se: Vec<Option<f64>>,
    /// `-log p_hat / b_n^2`; `None` for censored rungs.
    pub rates: Vec<Option<f64>>,
    /// Lower bound on the rate from the 95% upper bound on `p`, censored rungs only.
    pub rate_lower_bounds: Vec<Option<f64>>,
    pub censored: Vec<bool>,
    pub target: Option<f64>,
    pub trend: Trend,
}

impl DecayEstimate {
    pub fn last_rate(&self) -> Option<f64> {
        self.rates.last().copied().flatten()
    }

    /// Last-rung rate within `tol` relative of the target.
    pub fn within_band(&self, tol: f64) -> Option<bool> {
        let (rate, target) = (self.last_rate()?, self.target?);
        Some((rate - target).abs() <= tol * target.abs())
    }
}

fn trend(rates: &[Option<f64>], target: Option<f64>) -> Trend {
    let Some(target) = target else {
        return Trend::Undetermined;
    };
    let dist: Vec<f64> = rates.iter().flatten().map(|r| (r - target).abs()).collect();
    if dist.len() < 2 {
        return Trend::Undetermined;
    }
    let steps = dist.windows(2);
    if steps.clone().all(|w| w[1] < w[0]) {
        Trend::TowardTarget
    } else if steps.clone().all(|w| w[1] > w[0]) {
        Trend::AwayFromTarget
    } else {
        Trend::Mixed
    }
}

pub fn estimate_decay(
    params: &ModelParams,
    event: TailEvent,
    n_ladder: &[u64],
    reps: u64,
    seed: u64,
    options: TailOptions,
) -> Result<DecayEstimate> {
    if n_ladder.is_empty() {
        return Err(Error::InvalidParameter("empty n ladder".into()));
    }
    let target = match event_target(params, event) {
        Ok(t) => Some(t),
        Err(Error::RegimeMismatch(_)) | Err(Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    let samples: Vec<TailSample> = n_ladder
        .iter()
        .map(|&n| md_tail_sample_with(params, n, event, reps, seed, options))
        .collect::<Result<_>>()?;
    let b_n: Vec<f64> = n_ladder.iter().map(|&n| params.b_n(n)).collect();
    let rate_of = |p: f64, b: f64| -p.ln() / (b * b);
    let rates: Vec<Option<f64>> = samples
        .iter()
        .zip(&b_n)
        .map(|(s, &b)| (s.p_hat > 0.0).then(|| rate_of(s.p_hat, b)))
        .collect();
    let rate_lower_bounds = samples
        .iter()
        .zip(&b_n)
        .map(|(s, &b)| s.upper_bound.map(|u| rate_of(u, b)))
        .collect();
    Ok(DecayEstimate {
        event,
        estimator: options.estimator,
        n_ladder: n_ladder.to_vec(),
        b_n,
        p_hats: samples.iter().map(|s| s.p_hat).collect(),
        se: samples.iter().map(|s| s.se).collect(),
        trend: trend(&rates, target),
        rates,
        rate_lower_bounds,
        censored: samples.iter().map(|s| s.censored()).collect(),
        target,
    })
}
