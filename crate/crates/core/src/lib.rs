//! Simulation and moderate-deviation toolkit for single-server queues whose
//! interarrival and service times depend linearly and randomly on the
//! customer waiting times.
//!
//! The waiting times follow the modified Lindley recursion
//!
//! ```text
//! W_{i+1} = (C_i W_i + X_i)^+,    C_i = 1 - Theta_i / n
//! ```
//!
//! and the crate covers it from several angles:
//!
//! - [`recursion`]: exact simulation of `W`, the unreflected recursion `V`,
//!   the bounding system and their fluid / diffusion / moderate-deviation views.
//! - [`reflection`]: the Skorokhod map, the linear-drift map `M_theta` and the
//!   linearly generalized reflection `R_theta` on grid paths.
//! - [`fluid`]: closed-form fluid limits and stability classification.
//! - [`ratefn`]: explicit moderate-deviation rate functions together with an
//!   independent variational solver.
//! - [`diffusion`]: Ornstein-Uhlenbeck limits and moment checks.
//! - [`tailprob`]: empirical decay rates of tail probabilities.
//! - [`oracle`]: brute-force cross-checks on small instances.

pub mod config;
pub mod diffusion;
pub mod distributions;
pub mod error;
pub mod fluid;
pub mod oracle;
pub mod paths;
pub mod ratefn;
pub mod recursion;
pub mod reflection;
pub mod rng;
pub mod tailprob;

pub use error::{Error, Result};
pub use paths::{Grid, PiecewiseLinearPath, StepPath};
