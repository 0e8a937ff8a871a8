//! Reflection maps on grid paths.
//!
//! * [`reflect`]: the Skorokhod map `l = sup_{s<=t} (-x(s))^+`, `z = x + l`.
//! * [`map_m`]: the linear-drift map solving `u = x - theta * int u`.
//! * [`reflect_theta`]: reflection with linear restoring drift,
//!   `z = x - theta * int z + l`.
//!
//! All integrals are left-endpoint sums, the same convention the simulator
//! uses, so applying [`reflect_theta`] to a simulator's driving input
//! reproduces the simulated path exactly.

use log::warn;

use crate::error::{Error, Result};
use crate::paths::StepPath;

/// Regulated path `z` and regulator `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionPair {
    pub z: StepPath,
    pub l: StepPath,
}

impl ReflectionPair {
    /// `sum_k |z_k * (l_k - l_{k-1})|`.
    pub fn complementarity(&self) -> f64 {
        let z = self.z.values();
        let l = self.l.values();
        (1..l.len()).map(|k| (z[k] * (l[k] - l[k - 1])).abs()).sum()
    }

    /// Default complementarity tolerance, relative to the path magnitude.
    pub fn complementarity_tolerance(&self) -> f64 {
        1e-8 * self.z.sup_norm() * self.l.last()
    }

    /// Checks `z >= 0`, `l` nondecreasing from 0 and complementarity.
    pub fn satisfies_invariants(&self) -> bool {
        self.z.is_nonnegative()
            && self.l.first() == 0.0
            && self.l.is_nondecreasing()
            && self.complementarity() <= self.complementarity_tolerance()
    }
}

fn check_start(x: &StepPath) -> Result<()> {
    if x.first() < 0.0 {
        Err(Error::NegativeStart(x.first()))
    } else {
        Ok(())
    }
}

fn stability_guard(theta: f64, dt: f64) {
    if theta.abs() * dt >= 1.0 {
        warn!("|theta| dt = {} >= 1: explicit scheme may oscillate", theta.abs() * dt);
    }
}

/// Skorokhod reflection at zero.
pub fn reflect(x: &StepPath) -> Result<ReflectionPair> {
    check_start(x)?;
    let mut l = Vec::with_capacity(x.len());
    let mut z = Vec::with_capacity(x.len());
    let mut current = 0.0_f64;
    for &v in x.values() {
        current = current.max(-v);
        l.push(current);
        z.push(v + current);
    }
    Ok(ReflectionPair {
        z: StepPath::new(*x.grid(), z)?,
        l: StepPath::new(*x.grid(), l)?,
    })
}

/// Solves `u_k = x_k - theta dt sum_{j<k} u_j`.
pub fn map_m(x: &StepPath, theta: f64) -> Result<StepPath> {
    let dt = x.grid().dt();
    stability_guard(theta, dt);
    let mut acc = 0.0;
    let mut u = Vec::with_capacity(x.len());
    for &v in x.values() {
        let uk = v - theta * dt * acc;
        acc += uk;
        u.push(uk);
    }
    StepPath::new(*x.grid(), u)
}

/// Reflection with linear drift: `z = x - theta * int z + l`, with `l`
/// the minimal nondecreasing regulator keeping `z >= 0`.
pub fn reflect_theta(x: &StepPath, theta: f64) -> Result<ReflectionPair> {
    check_start(x)?;
    let dt = x.grid().dt();
    stability_guard(theta, dt);
    let mut acc = 0.0;
    let mut current = 0.0_f64;
    let mut l = Vec::with_capacity(x.len());
    let mut z = Vec::with_capacity(x.len());
    for &v in x.values() {
        let y = v - theta * dt * acc;
        current = current.max(-y);
        let zk = y + current;
        l.push(current);
        z.push(zk);
        acc += zk;
    }
    Ok(ReflectionPair {
        z: StepPath::new(*x.grid(), z)?,
        l: StepPath::new(*x.grid(), l)?,
    })
}

/// Picard iteration for the fixed point `u = x - theta * int R(u).z`.
///
/// Independent of [`reflect_theta`]: it only uses [`reflect`] and
/// [`StepPath::integrate`]. Returns the converged `u`.
pub fn map_m_reflected(x: &StepPath, theta: f64) -> Result<StepPath> {
    const MAX_ITER: usize = 10_000;
    const TOL: f64 = 1e-12;
    check_start(x)?;
    let mut u = x.clone();
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let z = reflect(&u)?.z;
        let next = x.combine(1.0, &z.integrate(), -theta)?;
        change = next.sup_distance(&u)?;
        u = next;
        if change < TOL {
            return Ok(u);
        }
    }
    Err(Error::NoConvergence {
        method: "picard",
        iterations: MAX_ITER,
        residual: change,
    })
}

/// Whether `R(x + y).z >= R(x).z` on the grid, for `y` nonnegative and
/// nondecreasing.
pub fn comparison_holds(x: &StepPath, y: &StepPath) -> Result<bool> {
    x.ensure_same_grid(y)?;
    if !y.is_nonnegative() || !y.is_nondecreasing() {
        return Err(Error::Precondition(
            "y must be nonnegative and nondecreasing".into(),
        ));
    }
    let base = reflect(x)?;
    let bumped = reflect(&x.add(y)?)?;
    Ok(bumped
        .z
        .values()
        .iter()
        .zip(base.z.values())
        .all(|(a, b)| *a >= *b - 1e-12))
}
