//! Exact simulation of the reflected recursion
//! `W_{i+1} = (C_i W_i + X_i)^+`, the unreflected recursion
//! `V_{i+1} = C_i V_i + X_i`, the bounding system `Upsilon`, and the fluid,
//! diffusion and moderate-deviation views derived from one raw path.
//!
//! Index conventions: a run at level `n` has `m = floor(n T)` steps and
//! `m + 1` nodes. Node `k` of `w_path` is `W_k`; node `k` of `l_path` is
//! `L_{k-1} = sum_{j<k} Psi_j`, so `l_path(0) = 0`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{c_coefficient, ModelParams};
use crate::error::{Error, Result};
use crate::fluid::{classify_v, classify_w};
use crate::paths::{Grid, StepPath};
use crate::rng::{stream, SimRng};

const GUARD_INTERVAL: usize = 1 << 16;

/// Explicit noise for one run: `theta[i] = Theta_i`, `x[i] = X^n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
}

impl Draws {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn coefficients(&self, n: u64) -> Vec<f64> {
        self.theta.iter().map(|&t| c_coefficient(t, n)).collect()
    }
}

/// Draws `steps` pairs `(Theta_i, X^n_i)`, theta first within each step.
pub fn draw_noise(params: &ModelParams, n: u64, steps: usize, rng: &mut SimRng) -> Draws {
    let offset = params.x_offset(n);
    let mut theta = Vec::with_capacity(steps);
    let mut x = Vec::with_capacity(steps);
    for _ in 0..steps {
        theta.push(params.draw_theta(rng));
        x.push(params.draw_x_with_offset(offset, rng));
    }
    Draws { theta, x }
}

fn nonfinite(index: usize, value: f64) -> Error {
    Error::NonFinite { index, value }
}

/// Reflected recursion on explicit draws. Returns `(W_0..W_m, Psi_0..Psi_{m-1})`.
pub fn iterate_w(w0: f64, n: u64, draws: &Draws) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = draws.len();
    let mut w = Vec::with_capacity(m + 1);
    let mut psi = Vec::with_capacity(m);
    let mut current = w0;
    w.push(current);
    for i in 0..m {
        let pre = c_coefficient(draws.theta[i], n) * current + draws.x[i];
        let (next, push) = if pre < 0.0 { (0.0, -pre) } else { (pre, 0.0) };
        current = next;
        w.push(current);
        psi.push(push);
        if (i + 1) % GUARD_INTERVAL == 0 && !pre.is_finite() {
            return Err(nonfinite(i + 1, pre));
        }
    }
    if let Some((k, &v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(nonfinite(k, v));
    }
    Ok((w, psi))
}

/// Unreflected recursion on explicit draws. Returns `V_0..V_m`.
pub fn iterate_v(v0: f64, n: u64, draws: &Draws) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(draws.len() + 1);
    let mut current = v0;
    v.push(current);
    for i in 0..draws.len() {
        current = c_coefficient(draws.theta[i], n) * current + draws.x[i];
        v.push(current);
        if (i + 1) % GUARD_INTERVAL == 0 && !current.is_finite() {
            return Err(nonfinite(i + 1, current));
        }
    }
    if let Some((k, &val)) = v.iter().enumerate().find(|(_, val)| !val.is_finite()) {
        return Err(nonfinite(k, val));
    }
    Ok(v)
}

/// Bounding system `Upsilon_0..Upsilon_m`.
///
/// `Upsilon_{i+1} = max(0, max N_{i+1})` where `N_1 = {C_0 W_0 + X_0}` and
/// `N_{i+1} = {X_i} U (X_i + C_i N_i)`. Only the extremes of `N_i` matter,
/// since `C_i` may have either sign.
pub fn iterate_upsilon(w0: f64, n: u64, draws: &Draws) -> Vec<f64> {
    let mut out = Vec::with_capacity(draws.len() + 1);
    out.push(w0);
    let (mut hi, mut lo) = (0.0_f64, 0.0_f64);
    for i in 0..draws.len() {
        let c = c_coefficient(draws.theta[i], n);
        let x = draws.x[i];
        if i == 0 {
            hi = c * w0 + x;
            lo = hi;
        } else {
            let (a, b) = (x + c * hi, x + c * lo);
            hi = x.max(a).max(b);
            lo = x.min(a).min(b);
        }
        out.push(hi.max(0.0));
    }
    out
}

/// Output of one run of the reflected recursion.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub n: u64,
    pub b_n: f64,
    /// Raw `W_k`.
    pub w_path: StepPath,
    /// Raw regulator `L_{k-1}`.
    pub l_path: StepPath,
    /// `Psi_0..Psi_{m-1}`.
    pub psi: Vec<f64>,
    pub fluid_view: StepPath,
    pub diffusion_view: StepPath,
    pub md_view: StepPath,
    pub center: f64,
}

/// Output of one run of the unreflected recursion.
#[derive(Debug, Clone)]
pub struct LinearSimOutput {
    pub n: u64,
    pub b_n: f64,
    pub v_path: StepPath,
    pub fluid_view: StepPath,
    pub diffusion_view: StepPath,
    pub md_view: StepPath,
    pub center: f64,
}

/// Fixed point used to center the `W` views. Unstable regimes fall back to 0.
pub fn w_center(params: &ModelParams) -> f64 {
    classify_w(params.mu, params.theta())
        .stable_point()
        .unwrap_or(0.0)
}

/// Fixed point used to center the `V` views. Unstable regimes fall back to 0.
pub fn v_center(params: &ModelParams) -> f64 {
    classify_v(params.mu, params.theta())
        .stable_point()
        .unwrap_or(0.0)
}

struct Views {
    fluid: StepPath,
    diffusion: StepPath,
    md: StepPath,
}

fn views(raw: &StepPath, n: u64, b_n: f64, center: f64) -> Result<Views> {
    let nf = n as f64;
    let fluid = raw.map(|w| w / nf)?;
    let diffusion = fluid.map(|w| nf.sqrt() * (w - center))?;
    let md = fluid.map(|w| nf.sqrt() / b_n * (w - center))?;
    Ok(Views {
        fluid,
        diffusion,
        md,
    })
}

fn level_grid(params: &ModelParams, n: u64) -> Result<Grid> {
    Grid::for_level(n, params.horizon)
}

/// Reflected recursion on explicit draws, wrapped with all views.
pub fn simulate_w_from_draws(params: &ModelParams, n: u64, draws: &Draws) -> Result<SimOutput> {
    let grid = level_grid(params, n)?;
    if draws.len() != grid.steps() {
        return Err(Error::LengthMismatch {
            expected: grid.steps(),
            got: draws.len(),
        });
    }
    let (w, psi) = iterate_w(params.initial_raw(n), n, draws)?;
    let mut l = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    l.push(0.0);
    for p in &psi {
        acc += p;
        l.push(acc);
    }
    let w_path = StepPath::new(grid, w)?;
    let l_path = StepPath::new(grid, l)?;
    let center = w_center(params);
    let b_n = params.b_n(n);
    let v = views(&w_path, n, b_n, center)?;
    Ok(SimOutput {
        n,
        b_n,
        w_path,
        l_path,
        psi,
        fluid_view: v.fluid,
        diffusion_view: v.diffusion,
        md_view: v.md,
        center,
    })
}

pub fn simulate_w_with_draws(
    params: &ModelParams,
    n: u64,
    seed: u64,
    rep: u64,
) -> Result<(SimOutput, Draws)> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let grid = level_grid(params, n)?;
    let draws = draw_noise(params, n, grid.steps(), &mut stream(seed, rep));
    let out = simulate_w_from_draws(params, n, &draws)?;
    Ok((out, draws))
}

pub fn simulate_w_rep(params: &ModelParams, n: u64, seed: u64, rep: u64) -> Result<SimOutput> {
    simulate_w_with_draws(params, n, seed, rep).map(|(out, _)| out)
}

/// One run of the reflected recursion from `W_0 = n w0` (plus the MD offset).
pub fn simulate_w(params: &ModelParams, n: u64, seed: u64) -> Result<SimOutput> {
    simulate_w_rep(params, n, seed, 0)
}

pub fn simulate_v_rep(
    params: &ModelParams,
    n: u64,
    seed: u64,
    rep: u64,
    v0: f64,
) -> Result<LinearSimOutput> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !v0.is_finite() {
        return Err(Error::InvalidParameter("v0 must be finite".into()));
    }
    let grid = level_grid(params, n)?;
    let draws = draw_noise(params, n, grid.steps(), &mut stream(seed, rep));
    let nf = n as f64;
    let raw0 = nf * v0 + params.b_n(n) * nf.sqrt() * params.md_offset;
    let v_path = StepPath::new(grid, iterate_v(raw0, n, &draws)?)?;
    let center = v_center(params);
    let b_n = params.b_n(n);
    let v = views(&v_path, n, b_n, center)?;
    Ok(LinearSimOutput {
        n,
        b_n,
        v_path,
        fluid_view: v.fluid,
        diffusion_view: v.diffusion,
        md_view: v.md,
        center,
    })
}

/// One run of the unreflected recursion from `V_0 = n v0`.
pub fn simulate_v(params: &ModelParams, n: u64, seed: u64, v0: f64) -> Result<LinearSimOutput> {
    simulate_v_rep(params, n, seed, 0, v0)
}

/// Coupled bounding processes on one noise stream (raw scale).
#[derive(Debug, Clone)]
pub struct BoundingSystems {
    pub w: StepPath,
    pub upsilon: StepPath,
    /// `V` with `V_0 = W_0`.
    pub v: StepPath,
    /// Running maximum of `U` with `U_0 = 0`.
    pub u_runmax: StepPath,
}

pub fn simulate_bounding_systems(params: &ModelParams, n: u64, seed: u64) -> Result<BoundingSystems> {
    let (out, draws) = simulate_w_with_draws(params, n, seed, 0)?;
    let grid = *out.w_path.grid();
    let w0 = out.w_path.first();
    let upsilon = StepPath::new(grid, iterate_upsilon(w0, n, &draws))?;
    let v = StepPath::new(grid, iterate_v(w0, n, &draws)?)?;
    let u_runmax = StepPath::new(grid, iterate_v(0.0, n, &draws)?)?.running_sup();
    Ok(BoundingSystems {
        w: out.w_path,
        upsilon,
        v,
        u_runmax,
    })
}

/// Fluid-scale driving input whose linearly reflected image is the simulated
/// fluid path: `xi_0 = W_0/n` and
/// `xi_{k+1} = xi_k + X_k/n + (theta - Theta_k) W_k / n^2`.
pub fn fluid_driving_input(out: &SimOutput, draws: &Draws, theta: f64) -> Result<StepPath> {
    let nf = out.n as f64;
    let wbar = out.fluid_view.values();
    let mut xi = Vec::with_capacity(wbar.len());
    let mut acc = wbar[0];
    xi.push(acc);
    for ((x, th), w) in draws.x.iter().zip(&draws.theta).zip(wbar) {
        acc += x / nf + (theta - th) * w / nf;
        xi.push(acc);
    }
    StepPath::new(*out.fluid_view.grid(), xi)
}

/// Endpoint, running maximum and regulator activity of one reflected run,
/// computed without storing the path. Uses the same stream and draw order as
/// [`simulate_w_rep`], so the numbers agree with the stored path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub w_end: f64,
    pub w_max: f64,
    pub regulated: bool,
}

pub fn run_summary(params: &ModelParams, n: u64, seed: u64, rep: u64) -> Result<RunSummary> {
    let grid = level_grid(params, n)?;
    let mut rng = stream(seed, rep);
    let offset = params.x_offset(n);
    let mut w = params.initial_raw(n);
    let mut w_max = w;
    let mut regulated = false;
    for i in 0..grid.steps() {
        let c = c_coefficient(params.draw_theta(&mut rng), n);
        let pre = c * w + params.draw_x_with_offset(offset, &mut rng);
        if pre < 0.0 {
            regulated = true;
            w = 0.0;
        } else {
            w = pre;
        }
        w_max = w_max.max(w);
        if (i + 1) % GUARD_INTERVAL == 0 && !w.is_finite() {
            return Err(nonfinite(i + 1, w));
        }
    }
    if !w.is_finite() || !w_max.is_finite() {
        return Err(nonfinite(grid.steps(), w));
    }
    Ok(RunSummary {
        w_end: w,
        w_max,
        regulated,
    })
}

/// Tail events on the moderate-deviation view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailEvent {
    /// `md_view(T) >= a`.
    EndpointExceed(f64),
    /// `sup_t md_view(t) >= a`.
    SupExceed(f64),
}

impl TailEvent {
    pub fn level(&self) -> f64 {
        match *self {
            TailEvent::EndpointExceed(a) | TailEvent::SupExceed(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Indicator averages.
    #[default]
    Plain,
    /// Likelihood-ratio estimator under a constant mean shift of normal `X`.
    MeanShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TailOptions {
    pub estimator: Estimator,
    /// Shift at MD scale per unit time for [`Estimator::MeanShift`]. Defaults
    /// to the constant drift that carries the fluid-linearized MD path from
    /// 0 to the event level at the horizon.
    pub md_drift: Option<f64>,
}

/// Tail probability estimate. `se` is `None` when it cannot be estimated
/// (a single replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSample {
    pub p_hat: f64,
    pub se: Option<f64>,
    pub hits: u64,
    pub reps: u64,
    /// One-sided 95% upper bound when no replication hit the event.
    pub upper_bound: Option<f64>,
}

impl TailSample {
    pub fn censored(&self) -> bool {
        self.hits == 0
    }
}

fn default_md_drift(theta: f64, a: f64, horizon: f64) -> f64 {
    if theta.abs() * horizon < 1e-8 {
        a / horizon
    } else {
        a * theta / (1.0 - (-theta * horizon).exp())
    }
}

/// Streaming replication: returns `(hit, likelihood ratio)`.
fn tail_replication(
    params: &ModelParams,
    n: u64,
    steps: usize,
    event: TailEvent,
    threshold_raw: f64,
    shift_z: f64,
    rng: &mut SimRng,
) -> (bool, f64) {
    let offset = params.x_offset(n);
    let x_mean = params.x_law.mean() + offset;
    let x_sd = params.x_law.sd();
    let nf = n as f64;
    let mut w = params.initial_raw(n);
    let mut best = w;
    let mut z_sum = 0.0;
    for _ in 0..steps {
        let theta = params.draw_theta(rng);
        let x = if shift_z != 0.0 {
            let z: f64 = rng.sample::<f64, _>(StandardNormal) + shift_z;
            z_sum += z;
            x_mean + x_sd * z
        } else {
            params.draw_x_with_offset(offset, rng)
        };
        w = ((1.0 - theta / nf) * w + x).max(0.0);
        if w > best {
            best = w;
        }
    }
    let hit = match event {
        TailEvent::EndpointExceed(_) => w >= threshold_raw,
        TailEvent::SupExceed(_) => best >= threshold_raw,
    };
    let lr = if shift_z != 0.0 {
        (-shift_z * z_sum + 0.5 * steps as f64 * shift_z * shift_z).exp()
    } else {
        1.0
    };
    (hit, lr)
}

/// Estimates `P(md_view satisfies event)` with plain Monte Carlo.
pub fn md_tail_sample(
    params: &ModelParams,
    n: u64,
    event: TailEvent,
    reps: u64,
    seed: u64,
) -> Result<TailSample> {
    md_tail_sample_with(params, n, event, reps, seed, TailOptions::default())
}

pub fn md_tail_sample_with(
    params: &ModelParams,
    n: u64,
    event: TailEvent,
    reps: u64,
    seed: u64,
    options: TailOptions,
) -> Result<TailSample> {
    params.validate()?;
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let a = event.level();
    if !a.is_finite() || a < 0.0 {
        return Err(Error::InvalidParameter(format!("event level must be >= 0, got {a}")));
    }
    let grid = level_grid(params, n)?;
    let nf = n as f64;
    let b_n = params.b_n(n);
    let center = w_center(params);
    let threshold_raw = nf * center + a * b_n * nf.sqrt();
    let shift_z = match options.estimator {
        Estimator::Plain => 0.0,
        Estimator::MeanShift => {
            if !params.x_law.is_normal() || params.x_law.sd() == 0.0 {
                return Err(Error::Precondition(
                    "mean-shift estimator needs a nondegenerate normal X law".into(),
                ));
            }
            let drift = options
                .md_drift
                .unwrap_or_else(|| default_md_drift(params.theta(), a, grid.horizon()));
            drift * b_n / nf.sqrt() / params.x_law.sd()
        }
    };
    let steps = grid.steps();
    let samples: Vec<(bool, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, rep);
            tail_replication(params, n, steps, event, threshold_raw, shift_z, &mut rng)
        })
        .collect();
    let k = reps as f64;
    let hits = samples.iter().filter(|(h, _)| *h).count() as u64;
    let values: Vec<f64> = samples
        .iter()
        .map(|&(h, lr)| if h { lr } else { 0.0 })
        .collect();
    let p_hat = values.iter().sum::<f64>() / k;
    let se = if reps < 2 {
        None
    } else {
        let var = values.iter().map(|v| (v - p_hat).powi(2)).sum::<f64>() / (k - 1.0);
        Some((var / k).sqrt())
    };
    let upper_bound = (hits == 0).then(|| 1.0 - 0.05_f64.powf(1.0 / k));
    Ok(TailSample {
        p_hat,
        se,
        hits,
        reps,
        upper_bound,
    })
}
