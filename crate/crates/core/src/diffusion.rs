//! Limiting OU / reflected-OU diffusions and the diffusion-scale comparison
//! against simulated queues.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::ModelParams;
use crate::error::{Error, Result};
use crate::paths::{Grid, StepPath};
use crate::ratefn::RateParams;
use crate::recursion::run_summary;
use crate::rng::{tagged, Tag};

/// `dX = (eta - theta X) dt + sigma dB`, optionally kept nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionSpec {
    pub drift_eta: f64,
    pub theta: f64,
    pub sigma: f64,
    pub reflected: bool,
    pub x0: f64,
}

impl DiffusionSpec {
    pub fn new(drift_eta: f64, theta: f64, sigma: f64, reflected: bool, x0: f64) -> Result<Self> {
        let spec = DiffusionSpec {
            drift_eta,
            theta,
            sigma,
            reflected,
            x0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.drift_eta, self.theta, self.sigma, self.x0]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter("diffusion parameters must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.reflected && self.x0 < 0.0 {
            return Err(Error::NegativeStart(self.x0));
        }
        Ok(())
    }

    /// Noiseless solution started at `x0`, unreflected.
    pub fn mean_path_at(&self, t: f64) -> f64 {
        if self.theta == 0.0 {
            return self.x0 + self.drift_eta * t;
        }
        let m = self.drift_eta / self.theta;
        m + (self.x0 - m) * (-self.theta * t).exp()
    }

    /// Exact marginal variance at `t` of the unreflected process.
    pub fn variance_at(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        if self.theta == 0.0 {
            return s2 * t;
        }
        s2 * (1.0 - (-2.0 * self.theta * t).exp()) / (2.0 * self.theta)
    }
}

/// How each replication picks its starting value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Start {
    #[default]
    Fixed,
    /// `N(eta/theta, sigma^2/(2 theta))`; requires `theta > 0`.
    Stationary,
}

fn start_value(spec: &DiffusionSpec, start: Start, rng: &mut impl Rng) -> f64 {
    match start {
        Start::Fixed => spec.x0,
        Start::Stationary => {
            let z: f64 = rng.sample(StandardNormal);
            spec.drift_eta / spec.theta + (spec.sigma * spec.sigma / (2.0 * spec.theta)).sqrt() * z
        }
    }
}

fn check_start(spec: &DiffusionSpec, start: Start) -> Result<()> {
    spec.validate()?;
    if start == Start::Stationary && spec.theta <= 0.0 {
        return Err(Error::Precondition(
            "stationary start needs theta > 0".into(),
        ));
    }
    Ok(())
}

#[inline]
fn em_step(spec: &DiffusionSpec, x: f64, dt: f64, sqrt_dt: f64, z: f64) -> f64 {
    let next = x + (spec.drift_eta - spec.theta * x) * dt + spec.sigma * sqrt_dt * z;
    if spec.reflected {
        next.max(0.0)
    } else {
        next
    }
}

/// Euler–Maruyama ensemble on `grid`, one path per replication.
pub fn simulate_ou(spec: &DiffusionSpec, grid: Grid, reps: usize, seed: u64) -> Result<Vec<StepPath>> {
    simulate_ou_from(spec, Start::Fixed, grid, reps, seed)
}

pub fn simulate_ou_from(
    spec: &DiffusionSpec,
    start: Start,
    grid: Grid,
    reps: usize,
    seed: u64,
) -> Result<Vec<StepPath>> {
    check_start(spec, start)?;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = tagged(seed, Tag::Diffusion, rep as u64);
            let mut values = Vec::with_capacity(grid.nodes());
            let mut x = start_value(spec, start, &mut rng);
            values.push(x);
            for _ in 0..grid.steps() {
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(spec, x, dt, sqrt_dt, z);
                values.push(x);
            }
            StepPath::new(grid, values)
        })
        .collect()
}

/// Endpoint values only, same streams and draw order as [`simulate_ou_from`].
pub fn ou_marginal(
    spec: &DiffusionSpec,
    start: Start,
    grid: Grid,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_start(spec, start)?;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    Ok((0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = tagged(seed, Tag::Diffusion, rep as u64);
            let mut x = start_value(spec, start, &mut rng);
            for _ in 0..grid.steps() {
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(spec, x, dt, sqrt_dt, z);
            }
            x
        })
        .collect())
}

/// Sample mean, unbiased variance and their Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleMoments {
    pub mean: f64,
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub count: usize,
}

pub fn sample_moments(xs: &[f64]) -> SampleMoments {
    let count = xs.len();
    let nf = count as f64;
    if count < 2 {
        return SampleMoments {
            mean: xs.first().copied().unwrap_or(f64::NAN),
            var: f64::NAN,
            se_mean: f64::NAN,
            se_var: f64::NAN,
            count,
        };
    }
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var = m2 * nf / (nf - 1.0);
    SampleMoments {
        mean,
        var,
        se_mean: (var / nf).sqrt(),
        se_var: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
        count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZScores {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub empirical_mean: f64,
    pub empirical_var: f64,
    pub target_mean: f64,
    pub target_var: f64,
    pub se_mean: f64,
    pub se_var: f64,
    pub z_scores: ZScores,
}

impl MomentReport {
    /// Against exact targets.
    pub fn against(sample: &SampleMoments, target_mean: f64, target_var: f64) -> Self {
        Self::build(sample, target_mean, target_var, sample.se_mean, sample.se_var)
    }

    /// Against another Monte Carlo sample; the standard errors are pooled.
    pub fn against_sample(sample: &SampleMoments, target: &SampleMoments) -> Self {
        let se_mean = sample.se_mean.hypot(target.se_mean);
        let se_var = sample.se_var.hypot(target.se_var);
        Self::build(sample, target.mean, target.var, se_mean, se_var)
    }

    fn build(s: &SampleMoments, target_mean: f64, target_var: f64, se_mean: f64, se_var: f64) -> Self {
        let z = |gap: f64, se: f64| {
            if se > 0.0 {
                gap / se
            } else if gap == 0.0 {
                0.0
            } else {
                gap.signum() * f64::INFINITY
            }
        };
        MomentReport {
            empirical_mean: s.mean,
            empirical_var: s.var,
            target_mean,
            target_var,
            se_mean,
            se_var,
            z_scores: ZScores {
                mean: z(s.mean - target_mean, se_mean),
                var: z(s.var - target_var, se_var),
            },
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z_scores.mean.abs() <= k && self.z_scores.var.abs() <= k
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Mean and variance of the stationary OU law of the positive-center limit.
pub fn stationary_moments(p: &RateParams, eta: f64) -> Result<(f64, f64)> {
    if p.theta.is_nan() || p.theta <= 0.0 {
        return Err(Error::Precondition(format!(
            "stationary moments need theta > 0, got {}",
            p.theta
        )));
    }
    let t = p.theta;
    let m = eta / t;
    let s2 = p.sigma_x.powi(2) / (2.0 * t) + p.mu.powi(2) * p.sigma_theta.powi(2) / (2.0 * t.powi(3));
    Ok((m, s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FcltCase {
    /// `mu > 0, theta > 0`: OU around `mu/theta`.
    I,
    /// `mu = 0, theta >= 0`: reflected OU / Brownian motion.
    Ii,
    /// `mu < 0`: collapses to zero.
    Iii,
}

impl FcltCase {
    pub fn detect(mu: f64, theta: f64) -> Result<Self> {
        if mu > 0.0 && theta > 0.0 {
            Ok(FcltCase::I)
        } else if mu == 0.0 && theta >= 0.0 {
            Ok(FcltCase::Ii)
        } else if mu < 0.0 {
            Ok(FcltCase::Iii)
        } else {
            Err(Error::RegimeMismatch(format!(
                "no diffusion limit for mu = {mu}, theta = {theta}"
            )))
        }
    }

    pub fn center(self, mu: f64, theta: f64) -> f64 {
        match self {
            FcltCase::I => mu / theta,
            FcltCase::Ii | FcltCase::Iii => 0.0,
        }
    }
}

impl std::str::FromStr for FcltCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(FcltCase::I),
            "ii" => Ok(FcltCase::Ii),
            "iii" => Ok(FcltCase::Iii),
            other => Err(Error::InvalidParameter(format!("unknown FCLT case `{other}`"))),
        }
    }
}

/// Limit diffusion for cases (i) and (ii), started at 0.
pub fn limit_spec(params: &ModelParams, eta: f64) -> Result<Option<DiffusionSpec>> {
    let (mu, theta) = (params.mu, params.theta());
    match FcltCase::detect(mu, theta)? {
        FcltCase::I => {
            let s2 = params.sigma_x().powi(2) + (mu / theta).powi(2) * params.sigma_theta().powi(2);
            DiffusionSpec::new(eta, theta, s2.sqrt(), false, 0.0).map(Some)
        }
        FcltCase::Ii => DiffusionSpec::new(eta, theta, params.sigma_x(), true, 0.0).map(Some),
        FcltCase::Iii => Ok(None),
    }
}

pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FcltReport {
    pub case: FcltCase,
    pub n: u64,
    pub t_eval: f64,
    pub reps: usize,
    /// Queue `W_hat(t_eval)` against the limit marginal.
    pub moments: MomentReport,
    /// Simulated limit diffusion against its exact unreflected marginal (case i).
    pub diffusion_moments: Option<MomentReport>,
    pub ks_statistic: f64,
    pub regulated_fraction: f64,
    pub delta: f64,
    /// Case (iii): fraction of runs with `sup |W_hat| > delta`.
    pub sup_exceed_diffusion: Option<f64>,
    /// Same on the moderate-deviation view.
    pub sup_exceed_md: Option<f64>,
    pub queue_samples: Vec<f64>,
    pub diffusion_samples: Vec<f64>,
}

/// Queue parameters used by the comparison: `W_0 = n W*`, `r = 0`, horizon `t_eval`.
pub fn fclt_params(params: &ModelParams, eta: f64, t_eval: f64) -> Result<ModelParams> {
    let case = FcltCase::detect(params.mu, params.theta())?;
    let mut q = params.clone();
    q.w0 = case.center(params.mu, params.theta());
    q.md_offset = 0.0;
    q.r = 0.0;
    q.eta = eta;
    q.horizon = t_eval;
    q.validate()?;
    Ok(q)
}

pub fn fclt_check(
    params: &ModelParams,
    eta: f64,
    n: u64,
    t_eval: f64,
    reps: usize,
    seed: u64,
) -> Result<FcltReport> {
    fclt_check_with_delta(params, eta, n, t_eval, reps, seed, DEFAULT_DELTA)
}

pub fn fclt_check_with_delta(
    params: &ModelParams,
    eta: f64,
    n: u64,
    t_eval: f64,
    reps: usize,
    seed: u64,
    delta: f64,
) -> Result<FcltReport> {
    if reps < 2 {
        return Err(Error::InvalidParameter("fclt_check needs at least 2 replications".into()));
    }
    let case = FcltCase::detect(params.mu, params.theta())?;
    let q = fclt_params(params, eta, t_eval)?;
    let center = case.center(q.mu, q.theta());
    let nf = n as f64;
    let b_n = q.b_n(n);
    let summaries = (0..reps as u64)
        .into_par_iter()
        .map(|rep| run_summary(&q, n, seed, rep))
        .collect::<Result<Vec<_>>>()?;

    let scale = |w: f64| nf.sqrt() * (w / nf - center);
    let queue_samples: Vec<f64> = summaries.iter().map(|s| scale(s.w_end)).collect();
    let regulated_fraction =
        summaries.iter().filter(|s| s.regulated).count() as f64 / reps as f64;
    // center is 0 in case (iii), so the sup of |W_hat| is the scaled running max
    let exceed = |thr: f64| {
        summaries.iter().filter(|s| scale(s.w_max) > thr).count() as f64 / reps as f64
    };
    let (sup_exceed_diffusion, sup_exceed_md) = if case == FcltCase::Iii {
        (Some(exceed(delta)), Some(exceed(delta * b_n)))
    } else {
        (None, None)
    };

    let grid = Grid::for_level(n, t_eval)?;
    let queue = sample_moments(&queue_samples);
    let (moments, diffusion_moments, diffusion_samples) = match limit_spec(&q, eta)? {
        Some(spec) => {
            let samples = ou_marginal(&spec, Start::Fixed, grid, reps, seed)?;
            let sim = sample_moments(&samples);
            if case == FcltCase::I {
                let (tm, tv) = (spec.mean_path_at(t_eval), spec.variance_at(t_eval));
                (
                    MomentReport::against(&queue, tm, tv),
                    Some(MomentReport::against(&sim, tm, tv)),
                    samples,
                )
            } else {
                (MomentReport::against_sample(&queue, &sim), None, samples)
            }
        }
        None => (MomentReport::against(&queue, 0.0, 0.0), None, vec![0.0; reps]),
    };
    Ok(FcltReport {
        case,
        n,
        t_eval,
        reps,
        moments,
        diffusion_moments,
        ks_statistic: ks_statistic(&queue_samples, &diffusion_samples),
        regulated_fraction,
        delta,
        sup_exceed_diffusion,
        sup_exceed_md,
        queue_samples,
        diffusion_samples,
    })
}
