//! Uniform-grid path representations.
//!
//! A [`StepPath`] holds one value per grid node and is read as a càdlàg step
//! function: the value at node `k` is the path on `[k dt, (k+1) dt)`. A
//! simulation at level `n` produces paths with `dt = 1/n`, so node `k` is the
//! `k`-th customer and discrete sums coincide with the left-endpoint integrals
//! computed by [`StepPath::integrate`].
//!
//! A [`PiecewiseLinearPath`] uses the same nodes but interpolates linearly
//! between them; its derivative is the constant cell slope. Rate functions
//! consume this flavor.

use std::io::{Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Uniform time grid on `[0, horizon]` with `steps` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid for a simulation at scaling level `n` over `[0, t]`:
    /// `floor(n t)` cells of width exactly `1/n`.
    pub fn for_level(n: u64, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("scaling level n must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        // The guard keeps n*T = 9999.999999 from losing a cell to rounding.
        let steps = (n as f64 * horizon + 1e-9).floor() as usize;
        Self::new(steps as f64 / n as f64, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of node `k`. The last node is pinned to the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Cell index `floor(t / dt)`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let k = (t / self.dt() + 1e-9).floor() as usize;
        k.min(self.steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes()).map(move |k| self.time(k))
    }

    /// Grid with every cell split into `factor` equal pieces.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.steps * factor.max(1))
    }

    fn same_as(&self, other: &Grid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }
}

fn check_values(grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.nodes() {
        return Err(Error::LengthMismatch {
            expected: grid.nodes(),
            got: values.len(),
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    Ok(())
}

/// Càdlàg step path sampled at the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    grid: Grid,
    values: Vec<f64>,
}

impl StepPath {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.nodes()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.nodes()],
        }
    }

    /// Samples `f` at every node time.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Path value at time `t`, i.e. the value of cell `floor(t/dt)`.
    pub fn at(&self, t: f64) -> f64 {
        self.values[self.grid.index_of(t)]
    }

    /// `sup_t |p(t)|` over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `t -> sup_{u <= t} p(u)`.
    pub fn running_sup(&self) -> StepPath {
        let mut current = f64::NEG_INFINITY;
        let values = self
            .values
            .iter()
            .map(|&v| {
                current = current.max(v);
                current
            })
            .collect();
        StepPath {
            grid: self.grid,
            values,
        }
    }

    /// Left-endpoint integral `t_k -> dt * sum_{j<k} p_j`.
    pub fn integrate(&self) -> StepPath {
        let dt = self.grid.dt();
        let mut acc = 0.0;
        let mut values = Vec::with_capacity(self.values.len());
        for &v in &self.values {
            values.push(dt * acc);
            acc += v;
        }
        StepPath {
            grid: self.grid,
            values,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<StepPath> {
        StepPath::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Result<StepPath> {
        self.map(|v| c * v)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &StepPath, b: f64) -> Result<StepPath> {
        self.ensure_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        StepPath::new(self.grid, values)
    }

    pub fn add(&self, other: &StepPath) -> Result<StepPath> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &StepPath) -> Result<StepPath> {
        self.combine(1.0, other, -1.0)
    }

    /// Uniform distance `sup_t |self(t) - other(t)|`.
    pub fn sup_distance(&self, other: &StepPath) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn ensure_same_grid(&self, other: &StepPath) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// Writes the path as CSV with header `t,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "value"])?;
        for (t, v) in self.grid.times().zip(&self.values) {
            w.serialize((t, v))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a two-column CSV with a header row; the first column is time, the
    /// second the value, whatever their names. Times must start at 0 and be
    /// uniformly spaced.
    pub fn read_csv<R: Read>(reader: R) -> Result<StepPath> {
        #[derive(Deserialize)]
        struct Row(f64, f64);
        let mut r = csv::Reader::from_reader(reader);
        let rows: Vec<Row> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() < 2 {
            return Err(Error::InvalidGrid("a path needs at least two rows".into()));
        }
        if rows[0].0.abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!(
                "first time must be 0, got {}",
                rows[0].0
            )));
        }
        let grid = Grid::new(rows[rows.len() - 1].0, rows.len() - 1)?;
        let dt = grid.dt();
        for (k, row) in rows.iter().enumerate() {
            if (row.0 - grid.time(k)).abs() > 1e-6 * dt {
                return Err(Error::InvalidGrid(format!(
                    "row {k}: time {} is off the uniform grid (expected {})",
                    row.0,
                    grid.time(k)
                )));
            }
        }
        StepPath::new(grid, rows.into_iter().map(|r| r.1).collect())
    }
}

/// Path that interpolates linearly between its node values.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    grid: Grid,
    node_values: Vec<f64>,
}

impl PiecewiseLinearPath {
    pub fn new(grid: Grid, node_values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &node_values)?;
        Ok(Self { grid, node_values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    /// Builds a path through `knots` given as `(node index, value)` pairs.
    /// Knots must be strictly increasing in index, start at node 0 and end
    /// at the last node.
    pub fn from_knots(grid: Grid, knots: &[(usize, f64)]) -> Result<Self> {
        if knots.len() < 2 || knots[0].0 != 0 || knots[knots.len() - 1].0 != grid.steps() {
            return Err(Error::Precondition(
                "knots must cover the first and last node".into(),
            ));
        }
        let mut values = vec![0.0; grid.nodes()];
        for pair in knots.windows(2) {
            let ((i0, v0), (i1, v1)) = (pair[0], pair[1]);
            if i1 <= i0 {
                return Err(Error::Precondition("knot indices must increase".into()));
            }
            for (k, slot) in values.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                let s = (k - i0) as f64 / (i1 - i0) as f64;
                *slot = if k == i1 { v1 } else { v0 + s * (v1 - v0) };
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    pub fn initial(&self) -> f64 {
        self.node_values[0]
    }

    pub fn terminal(&self) -> f64 {
        self.node_values[self.node_values.len() - 1]
    }

    pub fn cells(&self) -> usize {
        self.grid.steps()
    }

    /// Derivative on cell `k`, i.e. on `(t_k, t_{k+1})`.
    pub fn slope(&self, k: usize) -> f64 {
        (self.node_values[k + 1] - self.node_values[k]) / self.grid.dt()
    }

    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cells()).map(move |k| self.slope(k))
    }

    /// Value at the midpoint of cell `k`.
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.node_values[k] + self.node_values[k + 1])
    }

    pub fn sup_norm(&self) -> f64 {
        self.node_values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(self.grid, self.node_values.iter().map(|v| c * v).collect())
    }

    /// Same path on a grid with every cell split into `factor` pieces.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        let factor = factor.max(1);
        let grid = self.grid.refine(factor)?;
        let mut values = Vec::with_capacity(grid.nodes());
        for k in 0..self.cells() {
            let (a, b) = (self.node_values[k], self.node_values[k + 1]);
            for j in 0..factor {
                values.push(a + (b - a) * j as f64 / factor as f64);
            }
        }
        values.push(self.terminal());
        Self::new(grid, values)
    }

    /// Node values as a step path on the same grid.
    pub fn to_step_path(&self) -> StepPath {
        StepPath {
            grid: self.grid,
            values: self.node_values.clone(),
        }
    }

    /// Integrates per-cell slopes from `start`.
    pub fn from_slopes(grid: Grid, start: f64, slopes: &[f64]) -> Result<Self> {
        if slopes.len() != grid.steps() {
            return Err(Error::LengthMismatch {
                expected: grid.steps(),
                got: slopes.len(),
            });
        }
        let dt = grid.dt();
        let mut values = Vec::with_capacity(grid.nodes());
        let mut acc = start;
        values.push(acc);
        for s in slopes {
            acc += dt * s;
            values.push(acc);
        }
        Self::new(grid, values)
    }
}

impl From<&PiecewiseLinearPath> for StepPath {
    fn from(p: &PiecewiseLinearPath) -> Self {
        p.to_step_path()
    }
}
