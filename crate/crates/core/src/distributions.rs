//! Light-tailed laws for `Theta` and `X^n`, and the model parameter bundle.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Supported families. All have a moment generating function that is finite
/// near zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Normal { mean: f64, sd: f64 },
    ShiftedExponential { rate: f64, shift: f64 },
    Uniform { a: f64, b: f64 },
    /// `hi` with probability `p`, otherwise `lo`.
    TwoPoint { p: f64, lo: f64, hi: f64 },
}

const HEAVY_TAILED: &[&str] = &[
    "pareto",
    "cauchy",
    "lognormal",
    "log_normal",
    "student_t",
    "t",
    "levy",
    "weibull",
];

/// A sampleable law together with its analytic mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    family: Family,
    declared_mean: f64,
    declared_var: f64,
}

impl DistributionSpec {
    pub fn new(family: Family) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let (mean, var) = match family {
            Family::Normal { mean, sd } => {
                if !finite(&[mean, sd]) || sd < 0.0 {
                    return bad(format!("normal needs finite mean and sd >= 0, got ({mean}, {sd})"));
                }
                (mean, sd * sd)
            }
            Family::ShiftedExponential { rate, shift } => {
                if !finite(&[rate, shift]) || rate <= 0.0 {
                    return bad(format!("shifted_exponential needs rate > 0, got {rate}"));
                }
                (shift + 1.0 / rate, 1.0 / (rate * rate))
            }
            Family::Uniform { a, b } => {
                if !finite(&[a, b]) || b < a {
                    return bad(format!("uniform needs a <= b, got ({a}, {b})"));
                }
                (0.5 * (a + b), (b - a) * (b - a) / 12.0)
            }
            Family::TwoPoint { p, lo, hi } => {
                if !finite(&[p, lo, hi]) || !(0.0..=1.0).contains(&p) {
                    return bad(format!("two_point needs p in [0, 1], got {p}"));
                }
                let d = hi - lo;
                (lo + p * d, p * (1.0 - p) * d * d)
            }
        };
        Ok(Self {
            family,
            declared_mean: mean,
            declared_var: var,
        })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(Family::Normal { mean, sd })
    }

    pub fn shifted_exponential(rate: f64, shift: f64) -> Result<Self> {
        Self::new(Family::ShiftedExponential { rate, shift })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(Family::Uniform { a, b })
    }

    pub fn two_point(p: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Family::TwoPoint { p, lo, hi })
    }

    /// Point mass at `v`.
    pub fn point(v: f64) -> Result<Self> {
        Self::normal(v, 0.0)
    }

    /// Builds a law from a family name and a positional parameter list, as
    /// used in config files.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let key = name.trim().to_ascii_lowercase().replace('-', "_");
        if HEAVY_TAILED.contains(&key.as_str()) {
            return Err(Error::HeavyTailed(name.to_string()));
        }
        let want = |k: usize| -> Result<()> {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{key} takes {k} parameters, got {}",
                    params.len()
                )))
            }
        };
        match key.as_str() {
            "normal" | "gaussian" => {
                want(2)?;
                Self::normal(params[0], params[1])
            }
            "shifted_exponential" | "exponential" => {
                if key == "exponential" && params.len() == 1 {
                    return Self::shifted_exponential(params[0], 0.0);
                }
                want(2)?;
                Self::shifted_exponential(params[0], params[1])
            }
            "uniform" => {
                want(2)?;
                Self::uniform(params[0], params[1])
            }
            "two_point" => {
                want(3)?;
                Self::two_point(params[0], params[1], params[2])
            }
            "point" | "constant" => {
                want(1)?;
                Self::point(params[0])
            }
            _ => Err(Error::UnknownFamily(name.to_string())),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean(&self) -> f64 {
        self.declared_mean
    }

    pub fn var(&self) -> f64 {
        self.declared_var
    }

    pub fn sd(&self) -> f64 {
        self.declared_var.sqrt()
    }

    /// True for point masses. Sampling them consumes no randomness.
    pub fn is_degenerate(&self) -> bool {
        match self.family {
            Family::Normal { sd, .. } => sd == 0.0,
            Family::ShiftedExponential { .. } => false,
            Family::Uniform { a, b } => a == b,
            Family::TwoPoint { p, lo, hi } => p == 0.0 || p == 1.0 || lo == hi,
        }
    }

    pub fn is_normal(&self) -> bool {
        matches!(self.family, Family::Normal { .. })
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.is_degenerate() {
            return self.declared_mean;
        }
        match self.family {
            Family::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Family::ShiftedExponential { rate, shift } => {
                let e: f64 = rng.sample(Exp1);
                shift + e / rate
            }
            Family::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Family::TwoPoint { p, lo, hi } => {
                if rng.random::<f64>() < p {
                    hi
                } else {
                    lo
                }
            }
        }
    }
}

/// One queueing regime.
///
/// `X^n = mu + (Y - E[Y]) + r n^(beta - 1/2) + eta / sqrt(n)` where `Y` is
/// drawn from `x_law`, so `x_law` fixes the shape and variance of the noise
/// and `mu` its mean. `theta` and `sigma_theta` are the mean and standard
/// deviation of `theta_law`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub theta_law: DistributionSpec,
    pub x_law: DistributionSpec,
    pub r: f64,
    pub beta: f64,
    pub horizon: f64,
    pub w0: f64,
    /// Diffusion-scale drift perturbation.
    pub eta: f64,
    /// Initial offset at MD scale: `W_0 = n w0 + b_n sqrt(n) md_offset`.
    pub md_offset: f64,
}

impl ModelParams {
    pub fn new(
        mu: f64,
        theta_law: DistributionSpec,
        x_law: DistributionSpec,
        r: f64,
        beta: f64,
        horizon: f64,
        w0: f64,
    ) -> Result<Self> {
        let p = Self {
            mu,
            theta_law,
            x_law,
            r,
            beta,
            horizon,
            w0,
            eta: 0.0,
            md_offset: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Fully deterministic model: `Theta = theta`, `X = mu` almost surely.
    pub fn deterministic(mu: f64, theta: f64, w0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            mu,
            DistributionSpec::point(theta)?,
            DistributionSpec::point(0.0)?,
            0.0,
            0.25,
            horizon,
            w0,
        )
    }

    /// Normal `Theta ~ N(theta, sigma_theta^2)` and `X ~ N(mu, sigma_x^2)`.
    pub fn gaussian(
        mu: f64,
        theta: f64,
        sigma_x: f64,
        sigma_theta: f64,
        w0: f64,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(
            mu,
            DistributionSpec::normal(theta, sigma_theta)?,
            DistributionSpec::normal(0.0, sigma_x)?,
            0.0,
            0.25,
            horizon,
            w0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1/2), got {}",
                self.beta
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.w0.is_finite() && self.w0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "w0 must be finite and nonnegative, got {}",
                self.w0
            )));
        }
        for (name, v) in [
            ("mu", self.mu),
            ("r", self.r),
            ("eta", self.eta),
            ("md_offset", self.md_offset),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_md_offset(mut self, offset: f64) -> Self {
        self.md_offset = offset;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_w0(mut self, w0: f64) -> Self {
        self.w0 = w0;
        self
    }

    pub fn theta(&self) -> f64 {
        self.theta_law.mean()
    }

    pub fn sigma_theta(&self) -> f64 {
        self.theta_law.sd()
    }

    pub fn sigma_x(&self) -> f64 {
        self.x_law.sd()
    }

    /// `b_n = n^beta`.
    pub fn b_n(&self, n: u64) -> f64 {
        (n as f64).powf(self.beta)
    }

    /// `mu_n - mu = r b_n / sqrt(n) + eta / sqrt(n)`.
    pub fn drift_shift(&self, n: u64) -> f64 {
        let nf = n as f64;
        self.r * nf.powf(self.beta - 0.5) + self.eta / nf.sqrt()
    }

    pub fn mu_n(&self, n: u64) -> f64 {
        self.mu + self.drift_shift(n)
    }

    /// Raw initial value `W_0`.
    pub fn initial_raw(&self, n: u64) -> f64 {
        let nf = n as f64;
        nf * self.w0 + self.b_n(n) * nf.sqrt() * self.md_offset
    }

    #[inline]
    pub fn draw_theta(&self, rng: &mut SimRng) -> f64 {
        self.theta_law.sample(rng)
    }

    /// One draw of `X^n`. `offset` must be `mu_n(n) - x_law.mean()`.
    #[inline]
    pub fn draw_x_with_offset(&self, offset: f64, rng: &mut SimRng) -> f64 {
        self.x_law.sample(rng) + offset
    }

    pub fn x_offset(&self, n: u64) -> f64 {
        self.mu_n(n) - self.x_law.mean()
    }
}

/// `count` i.i.d. draws of `Theta`.
pub fn sample_theta(params: &ModelParams, rng: &mut SimRng, count: usize) -> Vec<f64> {
    (0..count).map(|_| params.draw_theta(rng)).collect()
}

/// `count` i.i.d. draws of `X^n`, with mean `mu_n` and variance `sigma_x^2`.
pub fn sample_x(params: &ModelParams, n: u64, rng: &mut SimRng, count: usize) -> Vec<f64> {
    let offset = params.x_offset(n);
    (0..count)
        .map(|_| params.draw_x_with_offset(offset, rng))
        .collect()
}

/// `C^n = 1 - theta / n`.
#[inline]
pub fn c_coefficient(theta_draw: f64, n: u64) -> f64 {
    1.0 - theta_draw / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    fn params_with(theta: DistributionSpec) -> ModelParams {
        ModelParams::new(0.0, theta, DistributionSpec::normal(0.0, 1.0).unwrap(), 0.0, 0.25, 1.0, 0.0)
            .unwrap()
    }

    #[test]
    fn normal_theta_mean() {
        let p = params_with(DistributionSpec::normal(2.0, 1.0).unwrap());
        let xs = sample_theta(&p, &mut stream(11, 0), 1_000_000);
        let (m, _) = moments(&xs);
        assert!((m - 2.0).abs() < 5e-3, "mean {m}");
        assert!(sample_theta(&p, &mut stream(11, 0), 0).is_empty());
    }

    #[test]
    fn two_point_moments() {
        let p = params_with(DistributionSpec::two_point(0.5, 0.0, 4.0).unwrap());
        let xs = sample_theta(&p, &mut stream(3, 0), 200_000);
        let (m, v) = moments(&xs);
        assert!((m - 2.0).abs() < 0.03);
        assert!((v - 4.0).abs() < 0.05);
    }

    #[test]
    fn declared_moments_match_samples_within_four_se() {
        // Fourth central moments, computed by hand per family.
        let cases: Vec<(DistributionSpec, f64)> = vec![
            (DistributionSpec::normal(-1.0, 2.0).unwrap(), 3.0 * 16.0),
            (DistributionSpec::shifted_exponential(2.0, -0.5).unwrap(), 9.0 / 16.0),
            (DistributionSpec::uniform(-1.0, 3.0).unwrap(), 256.0 / 80.0),
            (
                DistributionSpec::two_point(0.3, -1.0, 2.0).unwrap(),
                0.3 * 0.7 * (1.0 - 0.9 + 0.27) * 81.0,
            ),
        ];
        for (i, (law, mu4)) in cases.into_iter().enumerate() {
            let mut rng = stream(100 + i as u64, 0);
            let n = 1_000_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let (m, v) = moments(&xs);
            let se_m = (law.var() / n as f64).sqrt();
            let se_v = ((mu4 - law.var() * law.var()) / n as f64).sqrt();
            assert!((m - law.mean()).abs() < 4.0 * se_m, "{law:?}: mean {m}");
            assert!((v - law.var()).abs() < 4.0 * se_v, "{law:?}: var {v}");
        }
    }

    #[test]
    fn drift_perturbation_is_exact() {
        let base = params_with(DistributionSpec::point(1.0).unwrap());
        assert_eq!(base.mu_n(10_000), 0.0);
        let p = base.clone().with_r(1.0);
        assert!((p.mu_n(10_000) - 0.1).abs() < 1e-15);
        let shifts: Vec<f64> = [100u64, 1000, 10_000, 100_000]
            .iter()
            .map(|&n| p.drift_shift(n).abs())
            .collect();
        assert!(shifts.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_r_leaves_x_law_unchanged() {
        let p = params_with(DistributionSpec::point(1.0).unwrap());
        let a = sample_x(&p, 1000, &mut stream(5, 0), 100);
        let b: Vec<f64> = {
            let mut rng = stream(5, 0);
            (0..100).map(|_| p.x_law.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn x_sample_mean_tracks_mu_n() {
        let p = params_with(DistributionSpec::point(1.0).unwrap()).with_r(1.0);
        let n = 10_000;
        let xs = sample_x(&p, n, &mut stream(9, 0), 1_000_000);
        let (m, _) = moments(&xs);
        assert!((m - p.mu_n(n)).abs() < 3.0 * 1e-3);
    }

    #[test]
    fn c_coefficient_arithmetic() {
        assert_eq!(c_coefficient(0.0, 7), 1.0);
        assert_eq!(c_coefficient(7.0, 7), 0.0);
        assert!((c_coefficient(2.0, 100) - 0.98).abs() < 1e-15);
        assert!(c_coefficient(300.0, 100) < 0.0);
    }

    #[test]
    fn heavy_tails_and_unknown_names_are_rejected() {
        assert!(matches!(
            DistributionSpec::from_name("Pareto", &[1.0, 2.0]),
            Err(Error::HeavyTailed(_))
        ));
        assert!(matches!(
            DistributionSpec::from_name("cauchy", &[0.0, 1.0]),
            Err(Error::HeavyTailed(_))
        ));
        assert!(matches!(
            DistributionSpec::from_name("zeta", &[]),
            Err(Error::UnknownFamily(_))
        ));
        assert!(DistributionSpec::from_name("normal", &[0.0]).is_err());
        assert!(DistributionSpec::normal(0.0, -1.0).is_err());
        assert!(DistributionSpec::two_point(1.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn params_reject_bad_beta_and_negative_start() {
        let law = DistributionSpec::point(0.0).unwrap();
        assert!(ModelParams::new(0.0, law, law, 0.0, 0.5, 1.0, 0.0).is_err());
        assert!(ModelParams::new(0.0, law, law, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(0.0, law, law, 0.0, 0.2, 1.0, -1.0).is_err());
    }

    #[test]
    fn point_masses_consume_no_randomness() {
        let mut a = stream(1, 0);
        let b = a.clone();
        let law = DistributionSpec::point(3.0).unwrap();
        assert_eq!(law.sample(&mut a), 3.0);
        assert_eq!(a, b);
    }
}
