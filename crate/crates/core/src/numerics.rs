//! Fixed-step ODE integration on a uniform time grid.
//!
//! Every coefficient function in the crate lives on the same [`TimeGrid`] as
//! the Monte Carlo simulation, so tables are indexed by grid point and only
//! interpolated (linearly) at Runge-Kutta midpoints.

use std::io::Write;
use std::ops::{Add, Mul};

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            horizon: 1.0,
            steps: 1000,
        }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be finite and > 0"));
        }
        if steps < 2 {
            return Err(Error::invalid("steps", "need at least 2 steps"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid point `k`; the last point is exactly `T`.
    pub fn t(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.t(k))
    }

    /// Index of the grid interval containing `t` and the fractional position
    /// inside it.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let tol = 1e-12 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.locate_clamped(t))
    }

    fn locate_clamped(&self, t: f64) -> (usize, f64) {
        let x = (t / self.dt()).clamp(0.0, self.steps as f64);
        let k = (x.floor() as usize).min(self.steps - 1);
        (k, x - k as f64)
    }
}

/// Linear interpolation between two values.
pub trait Lerp: Copy {
    fn lerp(a: Self, b: Self, w: f64) -> Self;
}

impl Lerp for f64 {
    fn lerp(a: f64, b: f64, w: f64) -> f64 {
        a + w * (b - a)
    }
}

impl<const R: usize, const C: usize> Lerp for SMatrix<f64, R, C> {
    fn lerp(a: Self, b: Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

/// A named function of time sampled at every grid point.
#[derive(Debug, Clone)]
pub struct Table<V> {
    name: String,
    grid: TimeGrid,
    values: Vec<V>,
}

pub type ScalarTable = Table<f64>;

impl<V: Copy> Table<V> {
    pub fn from_values(name: impl Into<String>, grid: TimeGrid, values: Vec<V>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ModelInconsistency(format!(
                "table needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Table {
            name: name.into(),
            grid,
            values,
        })
    }

    pub fn from_fn(
        name: impl Into<String>,
        grid: TimeGrid,
        mut f: impl FnMut(usize, f64) -> V,
    ) -> Self {
        let values = (0..grid.len()).map(|k| f(k, grid.t(k))).collect();
        Table {
            name: name.into(),
            grid,
            values,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn at(&self, k: usize) -> V {
        self.values[k]
    }

    pub fn last(&self) -> V {
        self.values[self.values.len() - 1]
    }

    pub fn map<W: Copy>(&self, name: impl Into<String>, f: impl Fn(V) -> W) -> Table<W> {
        Table {
            name: name.into(),
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<V: Lerp> Table<V> {
    /// Linear interpolation; times outside `[0, T]` are rejected.
    pub fn eval(&self, t: f64) -> Result<V> {
        let (k, w) = self.grid.locate(t)?;
        Ok(V::lerp(self.values[k], self.values[k + 1], w))
    }

    /// Interpolation that clamps `t` to `[0, T]`; only used where the caller
    /// guarantees `t` lies on the grid span (RK4 stages).
    pub(crate) fn sample(&self, t: f64) -> V {
        let (k, w) = self.grid.locate_clamped(t);
        V::lerp(self.values[k], self.values[k + 1], w)
    }
}

impl ScalarTable {
    pub fn constant(name: impl Into<String>, grid: TimeGrid, value: f64) -> Self {
        Table::from_fn(name, grid, |_, _| value)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Writes `t,<name>` rows at full double precision.
pub fn write_tables_csv<W: Write>(mut out: W, tables: &[&ScalarTable]) -> Result<()> {
    let Some(first) = tables.first() else {
        return Ok(());
    };
    let grid = *first.grid();
    write!(out, "t")?;
    for t in tables {
        write!(out, ",{}", t.name())?;
    }
    writeln!(out)?;
    for k in 0..grid.len() {
        write!(out, "{}", fmt_f64(grid.t(k)))?;
        for t in tables {
            write!(out, ",{}", fmt_f64(t.at(k)))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Which end of the grid carries the boundary value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Initial value at index 0, integrate towards `T`.
    Forward,
    /// Terminal value at index N, integrate towards 0.
    Backward,
}

/// State types the RK4 integrator can advance.
pub trait OdeState: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn is_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl<const R: usize, const C: usize> OdeState for SMatrix<f64, R, C> {
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Classical fourth-order Runge-Kutta on `grid`.
///
/// `rhs(t, y)` is always `dy/dt`; `direction` only selects where the boundary
/// value sits.
pub fn rk4_integrate<S, F>(
    name: &str,
    rhs: F,
    boundary: S,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<Table<S>>
where
    S: OdeState,
    F: Fn(f64, &S) -> S,
{
    rk4_integrate_projected(name, rhs, boundary, grid, direction, |s| s)
}

/// RK4 with a projection applied after every step (e.g. symmetrisation).
pub fn rk4_integrate_projected<S, F, P>(
    name: &str,
    rhs: F,
    boundary: S,
    grid: &TimeGrid,
    direction: Direction,
    project: P,
) -> Result<Table<S>>
where
    S: OdeState,
    F: Fn(f64, &S) -> S,
    P: Fn(S) -> S,
{
    if !boundary.is_finite() {
        return Err(Error::IntegrationBlowup {
            name: name.to_string(),
            t: match direction {
                Direction::Forward => 0.0,
                Direction::Backward => grid.horizon(),
            },
        });
    }
    let n = grid.steps();
    let mut values = vec![boundary; n + 1];
    let step = |t: f64, h: f64, y: S| -> S {
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &(y + k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(y + k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(y + k3 * h));
        project(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    };
    match direction {
        Direction::Forward => {
            for k in 0..n {
                let t = grid.t(k);
                let next = step(t, grid.t(k + 1) - t, values[k]);
                if !next.is_finite() {
                    return Err(Error::IntegrationBlowup {
                        name: name.to_string(),
                        t: grid.t(k + 1),
                    });
                }
                values[k + 1] = next;
            }
        }
        Direction::Backward => {
            for k in (0..n).rev() {
                let t = grid.t(k + 1);
                let next = step(t, grid.t(k) - t, values[k + 1]);
                if !next.is_finite() {
                    return Err(Error::IntegrationBlowup {
                        name: name.to_string(),
                        t: grid.t(k),
                    });
                }
                values[k] = next;
            }
        }
    }
    Table::from_values(name, *grid, values)
}

/// Time-dependent scalar coefficient.
pub trait TimeFn {
    fn value(&self, t: f64) -> f64;
}

impl TimeFn for ScalarTable {
    fn value(&self, t: f64) -> f64 {
        self.sample(t)
    }
}

impl TimeFn for f64 {
    fn value(&self, _t: f64) -> f64 {
        *self
    }
}

impl<F: Fn(f64) -> f64> TimeFn for F {
    fn value(&self, t: f64) -> f64 {
        self(t)
    }
}

/// Scalar Riccati equation with time-dependent coefficients.
///
/// Forward: `y' = c + l y + q y^2` from `y(0)`.
/// Backward: `0 = y' + c + l y + q y^2` from `y(T)`.
pub fn solve_scalar_riccati(
    name: &str,
    q: &impl TimeFn,
    l: &impl TimeFn,
    c: &impl TimeFn,
    boundary: f64,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<ScalarTable> {
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    rk4_integrate(
        name,
        |t, &y| sign * (c.value(t) + l.value(t) * y + q.value(t) * y * y),
        boundary,
        grid,
        direction,
    )
}

/// RK4 steps per grid interval used for the filter variances, whose fast
/// transient would otherwise leave a visible discretisation error.
pub const VARIANCE_SUBSTEPS: usize = 4;

/// [`solve_scalar_riccati`] with `substeps` RK4 steps per grid interval,
/// sampled back onto `grid`.
#[allow(clippy::too_many_arguments)]
pub fn solve_scalar_riccati_refined(
    name: &str,
    q: &impl TimeFn,
    l: &impl TimeFn,
    c: &impl TimeFn,
    boundary: f64,
    grid: &TimeGrid,
    direction: Direction,
    substeps: usize,
) -> Result<ScalarTable> {
    let fine = TimeGrid::new(grid.horizon(), grid.steps() * substeps.max(1))?;
    let table = solve_scalar_riccati(name, q, l, c, boundary, &fine, direction)?;
    let values = (0..grid.len())
        .map(|k| table.at(k * substeps.max(1)))
        .collect();
    Table::from_values(name, *grid, values)
}
