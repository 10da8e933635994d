//! Weighted L1-median (spatial median) of a set of curves.
//!
//! Solves `sum_k w_k (Y_k - y) / ||Y_k - y|| = 0` with the Weiszfeld fixed
//! point, corrected with the Vardi-Zhang rule when an iterate lands on a data
//! curve. Unit weights give the population median `m_N`; survey weights
//! `1/pi_k` give the design-based estimator.
//!
//! Near the solution a safeguarded Newton step (the Hessian of the objective
//! is the discretized Jacobian operator) is tried alongside the Weiszfeld
//! step and the candidate with the lower objective is kept, so the objective
//! never increases from one iteration to the next.

use std::borrow::Borrow;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::curves::{weighted_pointwise_median, Curve, TimeGrid};
use crate::error::{Error, Result};
use crate::linearization::{assemble_integral, bilinear_form};

/// Anchor radius relative to the mean distance to the data.
pub const ANCHOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub enum SolverInit {
    #[default]
    WeightedPointwiseMedian,
    WeightedMean,
    Curve(Curve),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative score tolerance: `||score|| <= tol * sum w_k`.
    pub tol: f64,
    /// Relative iterate-change tolerance.
    pub step_tol: f64,
    pub max_iter: usize,
    pub init: SolverInit,
    /// Try a Newton step next to each Weiszfeld step.
    pub newton: bool,
    /// Keep the objective value of every iterate in [`MedianFit::trace`].
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            step_tol: 1e-10,
            max_iter: 500,
            init: SolverInit::default(),
            newton: true,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn weiszfeld_only(mut self) -> Self {
        self.newton = false;
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MedianFit {
    #[serde(skip)]
    pub median: Curve,
    pub iterations: usize,
    /// Grid norm of the weighted score, anchor terms excluded.
    pub residual_norm: f64,
    /// `residual_norm / sum w_k`.
    pub relative_residual: f64,
    pub objective: f64,
    /// The solution coincides with a data curve.
    pub anchored: bool,
    /// Index of the data curve the solution sits on.
    pub anchor_unit: Option<usize>,
    pub converged: bool,
    /// All directions `Y_k - y` are collinear, so the Jacobian operator is
    /// singular and the minimizer may not be unique.
    pub non_unique: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

/// Anchor-aware score evaluation.
#[derive(Debug, Clone)]
pub struct Score {
    /// `-sum_k w_k (Y_k - y)/||Y_k - y||` over units not coinciding with `y`.
    pub value: Curve,
    /// Units that coincide with `y` and were left out.
    pub anchors: Vec<usize>,
    /// Total weight of the anchor units.
    pub anchor_weight: f64,
}

fn check_inputs<C: Borrow<Curve>>(curves: &[C], weights: &[f64]) -> Result<Arc<TimeGrid>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid("median of an empty set of curves"))?
        .borrow();
    if weights.len() != curves.len() {
        return Err(Error::invalid(format!(
            "{} curves but {} weights",
            curves.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("weights must be positive and finite"));
    }
    if curves.iter().any(|c| !c.borrow().shares_grid(first)) {
        return Err(Error::GridMismatch);
    }
    Ok(first.grid().clone())
}

/// `sum_k w_k ||Y_k - y||`.
pub fn objective_value<C: Borrow<Curve>>(curves: &[C], weights: &[f64], y: &Curve) -> Result<f64> {
    let grid = check_inputs(curves, weights)?;
    if !curves[0].borrow().shares_grid(y) {
        return Err(Error::GridMismatch);
    }
    Ok(objective_raw(&grid, curves, weights, y.values()))
}

fn objective_raw<C: Borrow<Curve>>(grid: &TimeGrid, curves: &[C], weights: &[f64], y: &[f64]) -> f64 {
    curves
        .iter()
        .zip(weights)
        .map(|(c, w)| w * grid.dist(c.borrow().values(), y))
        .sum()
}

/// Score `T(y) = -sum_k w_k (Y_k - y)/||Y_k - y||`, the gradient of the
/// objective. Units with `Y_k = y` are excluded and reported.
pub fn score<C: Borrow<Curve>>(curves: &[C], weights: &[f64], y: &Curve) -> Result<Score> {
    let grid = check_inputs(curves, weights)?;
    if !curves[0].borrow().shares_grid(y) {
        return Err(Error::GridMismatch);
    }
    let mut acc = vec![0.0; grid.len()];
    let mut anchors = Vec::new();
    let mut anchor_weight = 0.0;
    for (k, (c, &w)) in curves.iter().zip(weights).enumerate() {
        let c = c.borrow().values();
        let r = grid.dist(c, y.values());
        if r == 0.0 {
            anchors.push(k);
            anchor_weight += w;
            continue;
        }
        for ((a, yk), yv) in acc.iter_mut().zip(c).zip(y.values()) {
            *a -= w * (yk - yv) / r;
        }
    }
    Ok(Score {
        value: Curve::from_parts(acc, grid),
        anchors,
        anchor_weight,
    })
}

struct State {
    /// `sum_{non-anchor} w_k (Y_k - y)/r_k`
    resultant: Vec<f64>,
    /// `sum_{non-anchor} w_k / r_k`
    inv_dist_mass: f64,
    anchor_weight: f64,
    anchor: Option<usize>,
    objective: f64,
    nearest: usize,
    nearest_dist: f64,
}

fn evaluate<C: Borrow<Curve>>(grid: &TimeGrid, curves: &[C], weights: &[f64], y: &[f64], eps: f64) -> State {
    let mut resultant = vec![0.0; y.len()];
    let mut inv_dist_mass = 0.0;
    let mut anchor_weight = 0.0;
    let mut anchor = None;
    let mut objective = 0.0;
    let mut nearest = 0;
    let mut nearest_dist = f64::INFINITY;
    for (k, (c, &w)) in curves.iter().zip(weights).enumerate() {
        let c = c.borrow().values();
        let r = grid.dist(c, y);
        objective += w * r;
        if r < nearest_dist {
            nearest_dist = r;
            nearest = k;
        }
        if r <= eps {
            anchor_weight += w;
            anchor.get_or_insert(k);
            continue;
        }
        let s = w / r;
        inv_dist_mass += s;
        for ((a, yk), yv) in resultant.iter_mut().zip(c).zip(y) {
            *a += s * (yk - yv);
        }
    }
    State {
        resultant,
        inv_dist_mass,
        anchor_weight,
        anchor,
        objective,
        nearest,
        nearest_dist,
    }
}

/// Weighted L1-median of `curves`.
///
/// Returns [`Error::NotConverged`] carrying the last iterate when `max_iter`
/// is exhausted.
pub fn l1_median<C: Borrow<Curve>>(curves: &[C], weights: &[f64], cfg: &SolverConfig) -> Result<MedianFit> {
    cfg.validate()?;
    let grid = check_inputs(curves, weights)?;
    let total_weight: f64 = weights.iter().sum();
    let first = curves[0].borrow().values();

    if curves.iter().all(|c| c.borrow().values() == first) {
        let median = curves[0].borrow().clone();
        return Ok(MedianFit {
            median,
            iterations: 0,
            residual_norm: 0.0,
            relative_residual: 0.0,
            objective: 0.0,
            anchored: true,
            anchor_unit: Some(0),
            converged: true,
            non_unique: false,
            trace: Vec::new(),
        });
    }

    let mut y: Vec<f64> = match &cfg.init {
        SolverInit::WeightedPointwiseMedian => {
            let refs: Vec<&Curve> = curves.iter().map(|c| c.borrow()).collect();
            weighted_pointwise_median(&refs, Some(weights))?.into_values()
        }
        SolverInit::WeightedMean => {
            let mut acc = vec![0.0; grid.len()];
            for (c, w) in curves.iter().zip(weights) {
                for (a, v) in acc.iter_mut().zip(c.borrow().values()) {
                    *a += w * v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= total_weight);
            acc
        }
        SolverInit::Curve(c) => {
            if !c.shares_grid(curves[0].borrow()) {
                return Err(Error::GridMismatch);
            }
            c.values().to_vec()
        }
    };

    let start = evaluate(&grid, curves, weights, &y, 0.0);
    let scale = (start.objective / total_weight).max(f64::MIN_POSITIVE);
    let eps = ANCHOR_EPS * scale;

    let mut trace = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut state = evaluate(&grid, curves, weights, &y, eps);

    for iter in 0..cfg.max_iter {
        if cfg.record_trace {
            trace.push(state.objective);
        }
        let rn = grid.norm_of(&state.resultant);

        if state.anchor_weight > 0.0 && rn <= state.anchor_weight {
            return Ok(finish(&grid, curves, y, state, rn, total_weight, iter, true, trace));
        }
        if state.anchor_weight == 0.0 && rn <= cfg.tol * total_weight && last_step <= cfg.step_tol {
            return Ok(finish(&grid, curves, y, state, rn, total_weight, iter, true, trace));
        }

        // Vardi-Zhang step: y + (1 - eta/||R||)^+ R / sum(w/r)
        let shrink = if state.anchor_weight > 0.0 {
            (1.0 - state.anchor_weight / rn).max(0.0)
        } else {
            1.0
        };
        let factor = shrink / state.inv_dist_mass;
        let mut cand: Vec<f64> = y
            .iter()
            .zip(&state.resultant)
            .map(|(yv, r)| yv + factor * r)
            .collect();
        let mut cand_state = evaluate(&grid, curves, weights, &cand, eps);

        if cfg.newton && state.anchor_weight == 0.0 {
            if let Some(step) = newton_step(&grid, curves, weights, &y, &state.resultant, eps) {
                let ny: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + b).collect();
                let ns = evaluate(&grid, curves, weights, &ny, eps);
                if ns.objective < cand_state.objective {
                    cand = ny;
                    cand_state = ns;
                }
            }
        }

        // Jump onto a nearby data curve when it satisfies the anchor condition.
        if cand_state.anchor_weight == 0.0 && cand_state.nearest_dist <= 1e-6 * scale {
            let j = cand_state.nearest;
            let yj = curves[j].borrow().values().to_vec();
            let js = evaluate(&grid, curves, weights, &yj, eps);
            if grid.norm_of(&js.resultant) <= js.anchor_weight && js.objective <= cand_state.objective {
                cand = yj;
                cand_state = js;
            }
        }

        let step = grid.dist(&cand, &y);
        let denom = grid.norm_of(&y).max(scale);
        last_step = step / denom;
        y = cand;
        state = cand_state;
    }

    let rn = grid.norm_of(&state.resultant);
    let on_anchor = state.anchor_weight > 0.0 && rn <= state.anchor_weight;
    let fit = finish(&grid, curves, y, state, rn, total_weight, cfg.max_iter, on_anchor, trace);
    if fit.converged {
        return Ok(fit);
    }
    Err(Error::NotConverged(Box::new(fit)))
}

#[allow(clippy::too_many_arguments)]
fn finish<C: Borrow<Curve>>(
    grid: &Arc<TimeGrid>,
    curves: &[C],
    y: Vec<f64>,
    state: State,
    rn: f64,
    total_weight: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
) -> MedianFit {
    let anchored = state.anchor_weight > 0.0 && converged;
    let non_unique = collinear_about(grid, curves, &y);
    let (anchor_unit, y) = match (anchored, state.anchor) {
        // snap exactly onto the data curve
        (true, Some(k)) => (Some(k), curves[k].borrow().values().to_vec()),
        _ => (None, y),
    };
    MedianFit {
        median: Curve::from_parts(y, grid.clone()),
        iterations,
        residual_norm: rn,
        relative_residual: rn / total_weight,
        objective: state.objective,
        anchored,
        anchor_unit,
        converged,
        non_unique,
        trace,
    }
}

fn newton_step<C: Borrow<Curve>>(
    grid: &TimeGrid,
    curves: &[C],
    weights: &[f64],
    y: &[f64],
    resultant: &[f64],
    eps: f64,
) -> Option<Vec<f64>> {
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.borrow().values()).collect();
    let (g, _) = assemble_integral(grid, &rows, weights, y, eps);
    let b = bilinear_form(grid, &g);
    let chol = b.cholesky()?;
    let rhs = DVector::from_iterator(y.len(), resultant.iter().zip(grid.weights()).map(|(r, q)| r * q));
    let step = chol.solve(&rhs);
    if step.iter().all(|v| v.is_finite()) {
        Some(step.iter().copied().collect())
    } else {
        None
    }
}

/// True when every nonzero `Y_k - y` lies on one line through the origin.
fn collinear_about<C: Borrow<Curve>>(grid: &TimeGrid, curves: &[C], y: &[f64]) -> bool {
    if grid.len() == 1 {
        return true;
    }
    let diffs: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| c.borrow().values().iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let norms: Vec<f64> = diffs.iter().map(|d| grid.norm_of(d)).collect();
    let (imax, &nmax) = match norms.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        Some(x) => x,
        None => return true,
    };
    if nmax == 0.0 {
        return true;
    }
    let e: Vec<f64> = diffs[imax].iter().map(|v| v / nmax).collect();
    diffs.iter().zip(&norms).all(|(d, &n)| {
        if n <= 1e-12 * nmax {
            return true;
        }
        (grid.dot(d, &e).abs() - n).abs() <= 1e-9 * n
    })
}
