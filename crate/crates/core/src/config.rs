//! TOML run configuration.
//!
//! ```toml
//! mu = 1.0
//! r = 0.0
//! beta = 0.2
//! T = 2.0
//! w0 = 0.0
//! seed = 42
//! eta = 0.0        # optional
//!
//! [theta]
//! family = "normal"
//! params = [2.0, 1.0]
//!
//! [x]
//! family = "normal"
//! params = [0.0, 1.0]
//! ```
//!
//! The mean of the `x` law is replaced by `mu`; only its shape and variance
//! are used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl LawConfig {
    pub fn to_spec(&self) -> Result<DistributionSpec> {
        DistributionSpec::from_name(&self.family, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    #[serde(default)]
    pub r: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub w0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eta: f64,
    pub theta: LawConfig,
    pub x: LawConfig,
}

fn default_beta() -> f64 {
    0.2
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let mut p = ModelParams::new(
            self.mu,
            self.theta.to_spec()?,
            self.x.to_spec()?,
            self.r,
            self.beta,
            self.horizon,
            self.w0,
        )?;
        p.eta = self.eta;
        p.validate()?;
        Ok(p)
    }
}
