//! Discretized curves, the quadrature inner product and baseline descriptive
//! statistics (mean curve and pointwise median).
//!
//! A curve is a vector of readings `Y(t_1), ..., Y(t_D)` attached to a shared
//! [`TimeGrid`]. Inner products are computed with the grid's quadrature
//! weights, `<a, b> = sum_d q_d a(t_d) b(t_d)`, so that norms approximate the
//! `L^2[0, T]` norm of the underlying trajectory.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance on `sum q_d = T`.
#[cfg(test)]
const HORIZON_RTOL: f64 = 1e-12;

/// Discretization points and quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    /// Builds a grid from explicit points and weights. The horizon is the sum
    /// of the weights.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("time grid needs at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} grid points but {} quadrature weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        if weights.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::invalid("quadrature weights must be positive"));
        }
        let horizon = weights.iter().sum();
        Ok(Self {
            points,
            weights,
            horizon,
        })
    }

    /// Uniform weights `q_d = T / D` on the given points.
    pub fn uniform(points: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let d = points.len().max(1);
        let weights = vec![horizon / d as f64; points.len()];
        let grid = Self::new(points, weights)?;
        Ok(Self { horizon, ..grid })
    }

    /// `D` equally spaced points `t_d = (d - 1/2) T / D` with uniform weights.
    pub fn equally_spaced(d: usize, horizon: f64) -> Result<Self> {
        let step = horizon / d as f64;
        let points = (0..d).map(|i| (i as f64 + 0.5) * step).collect();
        Self::uniform(points, horizon)
    }

    /// Trapezoid weights for a possibly non-uniform grid; the horizon is
    /// `t_D - t_1`.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("trapezoid rule needs at least two points"));
        }
        let d = points.len();
        let mut weights = vec![0.0; d];
        for i in 0..d - 1 {
            let h = points[i + 1] - points[i];
            weights[i] += h / 2.0;
            weights[i + 1] += h / 2.0;
        }
        let horizon = points[d - 1] - points[0];
        let grid = Self::new(points, weights)?;
        Ok(Self { horizon, ..grid })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when every quadrature weight is the same.
    pub fn is_uniform(&self) -> bool {
        let q0 = self.weights[0];
        self.weights
            .iter()
            .all(|&q| (q - q0).abs() <= 1e-14 * q0.abs())
    }

    #[cfg(test)]
    pub(crate) fn check_horizon(&self) -> bool {
        let s: f64 = self.weights.iter().sum();
        (s - self.horizon).abs() <= HORIZON_RTOL * self.horizon.abs().max(1.0) * 10.0
    }

    /// Quadrature inner product of two raw value vectors.
    #[inline]
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.len());
        debug_assert_eq!(b.len(), self.len());
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(q, (x, y))| q * x * y)
            .sum()
    }

    /// Quadrature norm of `a - b` without allocating.
    #[inline]
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(q, (x, y))| {
                let d = x - y;
                q * d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn norm_of(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Integral of a function sampled on the grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(q, v)| q * v).sum()
    }
}

/// One unit's trajectory sampled on a [`TimeGrid`].
#[derive(Debug, Clone)]
pub struct Curve {
    values: Vec<f64>,
    grid: Arc<TimeGrid>,
}

impl PartialEq for Curve {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

pub(crate) fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl Curve {
    pub fn new(values: Vec<f64>, grid: Arc<TimeGrid>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "curve has {} values but the grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Self { values, grid })
    }

    pub(crate) fn from_parts(values: Vec<f64>, grid: Arc<TimeGrid>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { values, grid }
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(c: f64, grid: Arc<TimeGrid>) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shares_grid(&self, other: &Curve) -> bool {
        same_grid(&self.grid, &other.grid)
    }

    /// Pointwise map producing a curve on the same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Curve {
        Curve::from_parts(self.values.iter().map(|&v| f(v)).collect(), self.grid.clone())
    }

    pub fn scaled(&self, c: f64) -> Curve {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Curve, f: impl Fn(f64, f64) -> f64) -> Result<Curve> {
        if !self.shares_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Curve::from_parts(values, self.grid.clone()))
    }

    /// Largest absolute coordinate difference.
    pub fn sup_distance(&self, other: &Curve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `sum_d q_d a(t_d) b(t_d)`.
pub fn inner_product(a: &Curve, b: &Curve) -> Result<f64> {
    if !a.shares_grid(b) {
        return Err(Error::GridMismatch);
    }
    Ok(a.grid.dot(&a.values, &b.values))
}

pub fn norm(a: &Curve) -> f64 {
    a.grid.norm_of(&a.values)
}

/// A finite population of curves on one grid, with unit labels.
#[derive(Debug, Clone)]
pub struct CurvePopulation {
    grid: Arc<TimeGrid>,
    curves: Vec<Curve>,
    ids: Vec<String>,
}

impl CurvePopulation {
    /// Builds a population; ids default to `1..=N`.
    pub fn new(grid: Arc<TimeGrid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (1..=rows.len()).map(|i| i.to_string()).collect();
        Self::with_ids(grid, rows, ids)
    }

    pub fn with_ids(grid: Arc<TimeGrid>, rows: Vec<Vec<f64>>, ids: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("population needs at least one curve"));
        }
        if ids.len() != rows.len() {
            return Err(Error::invalid("one id per curve is required"));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate unit id {id}")));
            }
        }
        let curves = rows
            .into_iter()
            .map(|r| Curve::new(r, grid.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, curves, ids })
    }

    pub fn from_curves(curves: Vec<Curve>) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::invalid("population needs at least one curve"))?;
        let grid = first.grid.clone();
        if curves.iter().any(|c| !same_grid(&c.grid, &grid)) {
            return Err(Error::GridMismatch);
        }
        let ids = (1..=curves.len()).map(|i| i.to_string()).collect();
        Ok(Self { grid, curves, ids })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn curve(&self, k: usize) -> &Curve {
        &self.curves[k]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Curves for a set of unit indices, in the given order.
    pub fn subset(&self, units: &[usize]) -> Vec<&Curve> {
        units.iter().map(|&k| &self.curves[k]).collect()
    }

    /// Per-unit average reading `(1/D) sum_d Y_k(t_d)`.
    pub fn unit_means(&self) -> Vec<f64> {
        self.curves
            .iter()
            .map(|c| c.values.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Per-unit maximum reading.
    pub fn unit_maxima(&self) -> Vec<f64> {
        self.curves
            .iter()
            .map(|c| c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Appends the time points of `later` after this population's, unit by
    /// unit. The new grid keeps both sets of weights; points of `later` are
    /// shifted by this grid's horizon when they would not be increasing.
    pub fn concat_time(&self, later: &CurvePopulation) -> Result<CurvePopulation> {
        if later.len() != self.len() {
            return Err(Error::invalid("populations must have the same units"));
        }
        let last = *self.grid.points.last().unwrap();
        let shift = if later.grid.points[0] > last { 0.0 } else { self.grid.horizon };
        let mut points = self.grid.points.clone();
        points.extend(later.grid.points.iter().map(|t| t + shift));
        let mut weights = self.grid.weights.clone();
        weights.extend_from_slice(&later.grid.weights);
        let grid = Arc::new(TimeGrid::new(points, weights)?);
        let rows = self
            .curves
            .iter()
            .zip(&later.curves)
            .map(|(a, b)| {
                let mut v = a.values.clone();
                v.extend_from_slice(&b.values);
                v
            })
            .collect();
        CurvePopulation::with_ids(grid, rows, self.ids.clone())
    }
}

/// Coordinate-wise arithmetic mean.
pub fn mean_curve(pop: &CurvePopulation) -> Curve {
    let d = pop.grid.len();
    let mut acc = vec![0.0; d];
    for c in &pop.curves {
        for (a, v) in acc.iter_mut().zip(&c.values) {
            *a += v;
        }
    }
    let n = pop.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Curve::from_parts(acc, pop.grid.clone())
}

/// Coordinate-wise (weighted) median; lower median on even-mass ties.
pub fn pointwise_median(pop: &CurvePopulation, weights: Option<&[f64]>) -> Result<Curve> {
    let refs: Vec<&Curve> = pop.curves.iter().collect();
    weighted_pointwise_median(&refs, weights)
}

pub(crate) fn weighted_pointwise_median(curves: &[&Curve], weights: Option<&[f64]>) -> Result<Curve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid("pointwise median of an empty set"))?;
    if let Some(w) = weights {
        if w.len() != curves.len() {
            return Err(Error::invalid("one weight per curve is required"));
        }
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("weights must be positive"));
        }
    }
    let d = first.len();
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(curves.len());
    let mut out = Vec::with_capacity(d);
    for t in 0..d {
        column.clear();
        column.extend(
            curves
                .iter()
                .enumerate()
                .map(|(k, c)| (c.values[t], weights.map_or(1.0, |w| w[k]))),
        );
        out.push(weighted_lower_median(&mut column));
    }
    Ok(Curve::from_parts(out, first.grid.clone()))
}

/// Smallest value whose cumulative weight reaches half the total mass.
pub(crate) fn weighted_lower_median(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let half = total / 2.0;
    let mut cum = 0.0;
    for &(v, w) in pairs.iter() {
        cum += w;
        // relative slack so that exact halves resolve to the lower median
        if cum >= half * (1.0 - 1e-14) {
            return v;
        }
    }
    pairs[pairs.len() - 1].0
}
