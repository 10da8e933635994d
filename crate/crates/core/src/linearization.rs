//! Jacobian operator of the median's score and the linearized variables.
//!
//! On a grid with quadrature weights `q`, the operator
//! `Gamma = sum_k (w_k/r_k) [I - d_k (x) d_k / r_k^2]`, with `d_k = Y_k - m`
//! and `(a (x) b)(y) = <a, y> b`, becomes the `D x D` matrix
//!
//! ```text
//! G[i][j] = c delta_ij - gamma(t_j, t_i) q_j,
//! c = sum_k w_k / r_k,   gamma(s, t) = sum_k w_k d_k(s) d_k(t) / r_k^3.
//! ```
//!
//! `G` is self-adjoint for the quadrature inner product, so `Q G` is a
//! symmetric matrix and is what gets factorized. On uniform grids `G` itself
//! is symmetric.

use std::borrow::Borrow;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::curves::{Curve, CurvePopulation, TimeGrid};
use crate::error::{Error, Result};
use crate::estimators::WeightedSample;
use crate::median::ANCHOR_EPS;

/// Condition number above which a ridge is added before solving.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Ridge size relative to `trace(G) / D`.
pub const RIDGE_FACTOR: f64 = 1e-10;

/// Discretized Jacobian operator evaluated at a median curve.
#[derive(Debug, Clone)]
pub struct GammaMatrix {
    entries: DMatrix<f64>,
    at_median: Curve,
    weights_used: Vec<f64>,
    excluded: Vec<usize>,
}

impl GammaMatrix {
    /// Operator matrix: `(G y)_i = sum_j G[i][j] y_j`.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn at_median(&self) -> &Curve {
        &self.at_median
    }

    pub fn weights_used(&self) -> &[f64] {
        &self.weights_used
    }

    /// Units sitting on the median (distance below the anchor radius), left
    /// out of the assembly.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    fn grid(&self) -> &Arc<TimeGrid> {
        self.at_median.grid()
    }

    pub fn apply(&self, y: &Curve) -> Result<Curve> {
        if !y.shares_grid(&self.at_median) {
            return Err(Error::GridMismatch);
        }
        let v = nalgebra::DVector::from_column_slice(y.values());
        let out = &self.entries * v;
        Ok(Curve::from_parts(out.iter().copied().collect(), self.grid().clone()))
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Largest `|G[i][j] - G[j][i]|`.
    pub fn asymmetry(&self) -> f64 {
        let g = &self.entries;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..i {
                worst = worst.max((g[(i, j)] - g[(j, i)]).abs());
            }
        }
        worst
    }

    /// `Q^{1/2} G Q^{-1/2}`, symmetric with the eigenvalues of `G`.
    pub fn symmetric_form(&self) -> DMatrix<f64> {
        let q = self.grid().weights();
        let d = self.dim();
        let mut s = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] = q[i].sqrt() * self.entries[(i, j)] / q[j].sqrt();
            }
        }
        symmetrize(&mut s);
        s
    }

    /// Eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.symmetric_form()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `lambda_max / lambda_min`, infinite when `lambda_min <= 0`.
    pub fn condition_estimate(&self) -> f64 {
        condition_of(&self.eigenvalues())
    }

    /// Solves `G u = h` for every right-hand side with one factorization.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Solved> {
        solve_system(self.grid(), &self.entries, rhs)
    }
}

fn condition_of(ev: &[f64]) -> f64 {
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Symmetric bilinear form `Q G`.
pub(crate) fn bilinear_form(grid: &TimeGrid, g: &DMatrix<f64>) -> DMatrix<f64> {
    let q = grid.weights();
    let mut b = g.clone();
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] *= q[i];
        }
    }
    symmetrize(&mut b);
    b
}

fn anchor_radius(grid: &TimeGrid, rows: &[&[f64]], m: &[f64]) -> f64 {
    let mean: f64 = rows.iter().map(|r| grid.dist(r, m)).sum::<f64>() / rows.len() as f64;
    ANCHOR_EPS * mean
}

/// Integral-form assembly: builds the kernel `gamma` first, then
/// `G = c I - gamma^T Q`.
pub(crate) fn assemble_integral(
    grid: &TimeGrid,
    rows: &[&[f64]],
    weights: &[f64],
    m: &[f64],
    eps: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let d = grid.len();
    let mut excluded = Vec::new();
    let mut c = 0.0;
    let mut cols: Vec<f64> = Vec::with_capacity(rows.len() * d);
    let mut used = 0;
    for (k, (row, &w)) in rows.iter().zip(weights).enumerate() {
        let r = grid.dist(row, m);
        if r <= eps {
            excluded.push(k);
            continue;
        }
        c += w / r;
        let s = (w / (r * r * r)).sqrt();
        cols.extend(row.iter().zip(m).map(|(y, mv)| s * (y - mv)));
        used += 1;
    }
    let a = DMatrix::from_column_slice(d, used, &cols);
    // gamma(t_i, t_j) = sum_k a_ik a_jk
    let kernel = &a * a.transpose();
    let q = grid.weights();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = -kernel[(j, i)] * q[j];
        }
        g[(i, i)] += c;
    }
    (g, excluded)
}

/// Tensor-form assembly: accumulates the rank-one projector of every unit.
pub(crate) fn assemble_tensor(
    grid: &TimeGrid,
    rows: &[&[f64]],
    weights: &[f64],
    m: &[f64],
    eps: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let d = grid.len();
    let q = grid.weights();
    let mut g = DMatrix::zeros(d, d);
    let mut excluded = Vec::new();
    let mut diff = vec![0.0; d];
    for (k, (row, &w)) in rows.iter().zip(weights).enumerate() {
        for ((o, y), mv) in diff.iter_mut().zip(row.iter()).zip(m) {
            *o = y - mv;
        }
        let r = grid.norm_of(&diff);
        if r <= eps {
            excluded.push(k);
            continue;
        }
        let s = w / r;
        let r2 = r * r;
        // (d (x) d)(y) = <d, y> d  =>  entry (i, j) = d_i d_j q_j
        for j in 0..d {
            let dj = diff[j] * q[j] / r2;
            for i in 0..d {
                g[(i, j)] -= s * diff[i] * dj;
            }
            g[(j, j)] += s;
        }
    }
    (g, excluded)
}

fn prepare<'a, C: Borrow<Curve>>(curves: &'a [C], weights: &[f64], m: &Curve) -> Result<Vec<&'a [f64]>> {
    if curves.is_empty() {
        return Err(Error::invalid("no curves to linearize"));
    }
    if curves.len() != weights.len() {
        return Err(Error::invalid("one weight per curve is required"));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("weights must be positive"));
    }
    if curves.iter().any(|c| !c.borrow().shares_grid(m)) {
        return Err(Error::GridMismatch);
    }
    Ok(curves.iter().map(|c| c.borrow().values()).collect())
}

fn build<C: Borrow<Curve>>(curves: &[C], weights: &[f64], m: &Curve, tensor: bool) -> Result<GammaMatrix> {
    let rows = prepare(curves, weights, m)?;
    let grid = m.grid();
    let eps = anchor_radius(grid, &rows, m.values());
    let (entries, excluded) = if tensor {
        assemble_tensor(grid, &rows, weights, m.values(), eps)
    } else {
        assemble_integral(grid, &rows, weights, m.values(), eps)
    };
    if excluded.len() == rows.len() {
        return Err(Error::invalid("every unit coincides with the median; the jacobian is undefined"));
    }
    Ok(GammaMatrix {
        entries,
        at_median: m.clone(),
        weights_used: weights.to_vec(),
        excluded,
    })
}

/// Jacobian operator at `m`, assembled through the kernel `gamma(r, t)`.
/// Unit weights give the population operator, weights `1/pi_k` its
/// design-based estimate.
pub fn gamma_matrix<C: Borrow<Curve>>(curves: &[C], weights: &[f64], m: &Curve) -> Result<GammaMatrix> {
    build(curves, weights, m, false)
}

/// Same operator assembled as a sum of rank-one projectors.
pub fn gamma_matrix_tensor<C: Borrow<Curve>>(curves: &[C], weights: &[f64], m: &Curve) -> Result<GammaMatrix> {
    build(curves, weights, m, true)
}

/// Output of a batch solve.
#[derive(Debug, Clone)]
pub struct Solved {
    pub solutions: Vec<Vec<f64>>,
    pub condition: f64,
    /// Ridge added to `G` when the condition estimate exceeded the limit.
    pub ridge: Option<f64>,
}

fn solve_system(grid: &TimeGrid, g: &DMatrix<f64>, rhs: &[Vec<f64>]) -> Result<Solved> {
    let d = g.nrows();
    let q = grid.weights();
    let mut s = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            s[(i, j)] = q[i].sqrt() * g[(i, j)] / q[j].sqrt();
        }
    }
    symmetrize(&mut s);
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let condition = condition_of(&ev);

    let mut b = bilinear_form(grid, g);
    let mut ridge = None;
    if !(condition <= CONDITION_LIMIT) {
        let lambda = RIDGE_FACTOR * g.trace() / d as f64;
        for i in 0..d {
            b[(i, i)] += lambda * q[i];
        }
        ridge = Some(lambda);
    }
    let chol = b.cholesky().ok_or(Error::SingularGamma { condition })?;

    let mut rhs_mat = DMatrix::zeros(d, rhs.len());
    for (col, h) in rhs.iter().enumerate() {
        for i in 0..d {
            rhs_mat[(i, col)] = q[i] * h[i];
        }
    }
    let sol = chol.solve(&rhs_mat);
    let solutions = (0..rhs.len())
        .map(|c| sol.column(c).iter().copied().collect())
        .collect();
    Ok(Solved {
        solutions,
        condition,
        ridge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationSource {
    Population,
    SampleEstimated,
}

/// Linearized variables, one curve per unit of the set they were computed on.
#[derive(Debug, Clone)]
pub struct LinearizedSet {
    pub values: Vec<Curve>,
    pub source: LinearizationSource,
    /// Units lying on the median; their entry is the zero curve.
    pub excluded: Vec<usize>,
    pub condition: f64,
    pub ridge: Option<f64>,
}

impl LinearizedSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at grid index `t`, one per unit.
    pub fn at(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|u| u.values()[t]).collect()
    }

    /// Curves packed as raw rows.
    pub fn rows(&self) -> Vec<&[f64]> {
        self.values.iter().map(|u| u.values()).collect()
    }
}

/// `u_k = G^{-1} (Y_k - m) / ||Y_k - m||` under arbitrary positive weights.
pub fn linearize_weighted<C: Borrow<Curve>>(
    curves: &[C],
    weights: &[f64],
    m: &Curve,
    source: LinearizationSource,
) -> Result<LinearizedSet> {
    let gamma = gamma_matrix(curves, weights, m)?;
    let grid = m.grid().clone();
    let d = grid.len();
    let excluded = gamma.excluded.clone();
    let mut directions = Vec::with_capacity(curves.len());
    let mut skip = vec![false; curves.len()];
    for &k in &excluded {
        skip[k] = true;
    }
    for (k, c) in curves.iter().enumerate() {
        if skip[k] {
            directions.push(vec![0.0; d]);
            continue;
        }
        let diff: Vec<f64> = c.borrow().values().iter().zip(m.values()).map(|(a, b)| a - b).collect();
        let r = grid.norm_of(&diff);
        directions.push(diff.into_iter().map(|v| v / r).collect());
    }
    let solved = gamma.solve_many(&directions)?;
    let values = solved
        .solutions
        .into_iter()
        .map(|u| Curve::from_parts(u, grid.clone()))
        .collect();
    Ok(LinearizedSet {
        values,
        source,
        excluded,
        condition: solved.condition,
        ridge: solved.ridge,
    })
}

/// Population linearized variables about the population median `m_N`.
pub fn linearized_variables(pop: &CurvePopulation, median: &Curve) -> Result<LinearizedSet> {
    let w = vec![1.0; pop.len()];
    linearize_weighted(pop.curves(), &w, median, LinearizationSource::Population)
}

/// Sample estimates `u_hat_k` using the sample's own weights for the
/// estimated operator and the fitted median `m_hat`.
pub fn estimated_linearized_variables(sample: &WeightedSample<'_>, m_hat: &Curve) -> Result<LinearizedSet> {
    linearize_weighted(sample.curves(), sample.weights(), m_hat, LinearizationSource::SampleEstimated)
}
