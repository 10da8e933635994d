//! Variance functions of the median estimator and their estimators.
//!
//! The estimator behaves like the Horvitz-Thompson estimator of the total of
//! the linearized variables, so `var(t)` is the design variance of that total
//! evaluated pointwise in `t`. Closed forms cover SRSWOR, stratified SRSWOR
//! and poststratification; other designs with known joint inclusion
//! probabilities go through the double sum.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::curves::{Curve, TimeGrid};
use crate::designs::{Design, JointInclusion, SampleDraw, StrataSpec};
use crate::error::{Error, Result};
use crate::linearization::LinearizedSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    PopulationAsymptotic,
    Estimated,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceFunction {
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grid: Arc<TimeGrid>,
    pub kind: VarianceKind,
    pub design: String,
    /// Pointwise values that came out negative and were set to zero.
    pub clamped: usize,
}

impl VarianceFunction {
    fn new(mut values: Vec<f64>, grid: Arc<TimeGrid>, kind: VarianceKind, design: &str) -> Self {
        let mut clamped = 0;
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        Self {
            values,
            grid,
            kind,
            design: design.to_string(),
            clamped,
        }
    }

    /// Pointwise standard deviation.
    pub fn sd(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.sqrt()).collect()
    }

    pub fn as_curve(&self) -> Curve {
        Curve::from_parts(self.values.clone(), self.grid.clone())
    }

    /// Quadrature integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn grid_of(u: &LinearizedSet) -> Result<Arc<TimeGrid>> {
    u.values
        .first()
        .map(|c| c.grid().clone())
        .ok_or_else(|| Error::Variance("no linearized variables".into()))
}

/// `sum (x - mean)^2 / (len - 1)` at every grid point for the given rows.
fn pointwise_s2(rows: &[&[f64]], d: usize) -> Vec<f64> {
    let n = rows.len();
    if n < 2 {
        return vec![0.0; d];
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in ss.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    ss.into_iter().map(|s| s / (n - 1) as f64).collect()
}

fn srs_factor(big_n: usize, n: usize) -> f64 {
    let (big, n) = (big_n as f64, n as f64);
    big * big * (1.0 / n - 1.0 / big)
}

/// Within-stratum sum `sum_h N_h^2 (1/n_h - 1/N_h) S^2_h` over the rows.
fn stratified_sum(rows: &[&[f64]], labels: &[usize], sizes: &[usize], alloc: &[usize], d: usize) -> Vec<f64> {
    let mut by_h: Vec<Vec<&[f64]>> = vec![Vec::new(); sizes.len()];
    for (r, &h) in rows.iter().zip(labels) {
        by_h[h].push(r);
    }
    let mut out = vec![0.0; d];
    for (h, members) in by_h.iter().enumerate() {
        if alloc[h] == sizes[h] {
            continue;
        }
        let f = srs_factor(sizes[h], alloc[h]);
        for (o, s) in out.iter_mut().zip(pointwise_s2(members, d)) {
            *o += f * s;
        }
    }
    out
}

/// Asymptotic variance function of the median estimator under `design`,
/// from the population linearized variables.
///
/// Systematic sampling has no closed form from first- and second-order
/// probabilities alone and uses the SRSWOR expression. With-replacement
/// PPS uses the Hansen-Hurwitz variance of the `u`-total.
pub fn variance_function(u: &LinearizedSet, design: &Design) -> Result<VarianceFunction> {
    let grid = grid_of(u)?;
    let d = grid.len();
    let big_n = design.population();
    if u.len() != big_n {
        return Err(Error::Variance(format!(
            "{} linearized variables for a population of {big_n}",
            u.len()
        )));
    }
    let rows = u.rows();
    let values = match design {
        Design::Srswor { n, .. } | Design::Systematic { n, .. } => {
            let f = srs_factor(big_n, *n);
            pointwise_s2(&rows, d).into_iter().map(|s| f * s).collect()
        }
        Design::Stratified { strata, allocation } => {
            stratified_sum(&rows, strata.labels(), strata.sizes(), allocation, d)
        }
        Design::Ppswr { n, p } => {
            let mut total = vec![0.0; d];
            for r in &rows {
                for (t, v) in total.iter_mut().zip(r.iter()) {
                    *t += v;
                }
            }
            let mut acc = vec![0.0; d];
            for (r, &pk) in rows.iter().zip(p) {
                for ((a, v), tot) in acc.iter_mut().zip(r.iter()).zip(&total) {
                    let z = v / pk - tot;
                    *a += pk * z * z;
                }
            }
            acc.into_iter().map(|a| a / *n as f64).collect()
        }
    };
    Ok(VarianceFunction::new(values, grid, VarianceKind::PopulationAsymptotic, design.name()))
}

/// `u'(t) Delta u(t)` with `Delta_kl = (pi_kl - pi_k pi_l)/(pi_k pi_l)`
/// over every pair of population units.
pub fn variance_function_generic(u: &LinearizedSet, design: &Design) -> Result<VarianceFunction> {
    let grid = grid_of(u)?;
    let d = grid.len();
    let big_n = design.population();
    if u.len() != big_n {
        return Err(Error::Variance("linearized set does not cover the population".into()));
    }
    let pi = design.inclusion_probabilities();
    let rows = u.rows();
    let mut acc = vec![0.0; d];
    for k in 0..big_n {
        for l in 0..big_n {
            let pkl = exact_joint(design, k, l)?;
            let delta = (pkl - pi[k] * pi[l]) / (pi[k] * pi[l]);
            for (a, (x, y)) in acc.iter_mut().zip(rows[k].iter().zip(rows[l].iter())) {
                *a += delta * x * y;
            }
        }
    }
    Ok(VarianceFunction::new(acc, grid, VarianceKind::PopulationAsymptotic, design.name()))
}

fn exact_joint(design: &Design, k: usize, l: usize) -> Result<f64> {
    match design.joint_inclusion(k, l) {
        JointInclusion::Exact(v) => Ok(v),
        JointInclusion::UseSrsworApproximation => Err(Error::Variance(format!(
            "{} design has no usable joint inclusion probabilities; use the SRSWOR approximation",
            design.name()
        ))),
        JointInclusion::UseHansenHurwitz => Err(Error::Variance(format!(
            "{} design is with replacement; use the Hansen-Hurwitz variance",
            design.name()
        ))),
    }
}

/// Variance of the poststratified estimator under SRSWOR of size `n`:
/// `N^2 (1/n - 1/N) sum_g (N_g - 1)/(N - 1) S^2_g`.
pub fn poststratified_variance_function(u: &LinearizedSet, groups: &StrataSpec, n: usize) -> Result<VarianceFunction> {
    let grid = grid_of(u)?;
    let d = grid.len();
    let big_n = groups.population();
    if u.len() != big_n {
        return Err(Error::Variance("linearized set does not cover the population".into()));
    }
    let rows = u.rows();
    let mut by_g: Vec<Vec<&[f64]>> = vec![Vec::new(); groups.count()];
    for (r, &g) in rows.iter().zip(groups.labels()) {
        by_g[g].push(r);
    }
    let mut acc = vec![0.0; d];
    for members in &by_g {
        let w = (members.len() as f64 - 1.0) / (big_n as f64 - 1.0);
        for (a, s) in acc.iter_mut().zip(pointwise_s2(members, d)) {
            *a += w * s;
        }
    }
    let f = srs_factor(big_n, n);
    let values = acc.into_iter().map(|a| f * a).collect();
    Ok(VarianceFunction::new(values, grid, VarianceKind::PopulationAsymptotic, "poststratified"))
}

/// Estimated variance function from the sample linearized variables
/// (`u_hat` ordered like `sample.units`).
///
/// SRSWOR and systematic samples use `N^2 (1/n - 1/N) S^2_s`; stratified
/// samples sum that expression over strata; PPS samples use
/// [`hansen_hurwitz_variance`].
pub fn variance_estimate(sample: &SampleDraw, u_hat: &LinearizedSet) -> Result<VarianceFunction> {
    let grid = grid_of(u_hat)?;
    let d = grid.len();
    if u_hat.len() != sample.len() {
        return Err(Error::Variance("one estimated linearized variable per sampled unit is required".into()));
    }
    let rows = u_hat.rows();
    let design = &*sample.design;
    let values = match design {
        Design::Srswor { n, .. } | Design::Systematic { n, .. } => {
            let f = srs_factor(design.population(), *n);
            pointwise_s2(&rows, d).into_iter().map(|s| f * s).collect()
        }
        Design::Stratified { strata, allocation } => {
            for (h, (&nh, &big)) in allocation.iter().zip(strata.sizes()).enumerate() {
                if nh < 2 && nh < big {
                    return Err(Error::Variance(format!(
                        "stratum {} has a single sampled unit; its variance is not estimable",
                        h + 1
                    )));
                }
            }
            let labels: Vec<usize> = sample.units.iter().map(|&k| strata.labels()[k]).collect();
            stratified_sum(&rows, &labels, strata.sizes(), allocation, d)
        }
        Design::Ppswr { .. } => return hansen_hurwitz_variance(sample, u_hat),
    };
    Ok(VarianceFunction::new(values, grid, VarianceKind::Estimated, design.name()))
}

/// `sum_{k,l in s} (pi_kl - pi_k pi_l)/(pi_kl pi_k pi_l) u_k u_l`.
pub fn variance_estimate_generic(sample: &SampleDraw, u_hat: &LinearizedSet) -> Result<VarianceFunction> {
    let grid = grid_of(u_hat)?;
    let d = grid.len();
    if u_hat.len() != sample.len() {
        return Err(Error::Variance("one estimated linearized variable per sampled unit is required".into()));
    }
    let rows = u_hat.rows();
    let design = &*sample.design;
    let mut acc = vec![0.0; d];
    for (i, &k) in sample.units.iter().enumerate() {
        for (j, &l) in sample.units.iter().enumerate() {
            let pkl = exact_joint(design, k, l)?;
            if pkl <= 0.0 {
                return Err(Error::Variance(
                    "zero joint inclusion probability inside the sample; use the SRSWOR approximation".into(),
                ));
            }
            let (pk, pl) = (sample.pi[i], sample.pi[j]);
            let c = (pkl - pk * pl) / (pkl * pk * pl);
            for (a, (x, y)) in acc.iter_mut().zip(rows[i].iter().zip(rows[j].iter())) {
                *a += c * x * y;
            }
        }
    }
    Ok(VarianceFunction::new(acc, grid, VarianceKind::Estimated, design.name()))
}

/// Residual-based variance estimate for the poststratified estimator under
/// SRSWOR: `N^2 (1/n - 1/N) sum_g sum_{s_g} (u_k - mean_{s_g} u)^2 / (n - 1)`.
pub fn poststratified_variance_estimate(
    sample: &SampleDraw,
    u_hat: &LinearizedSet,
    groups: &StrataSpec,
) -> Result<VarianceFunction> {
    let grid = grid_of(u_hat)?;
    let d = grid.len();
    let n = sample.len();
    if u_hat.len() != n {
        return Err(Error::Variance("one estimated linearized variable per sampled unit is required".into()));
    }
    if n < 2 {
        return Err(Error::Variance("need at least two sampled units".into()));
    }
    let rows = u_hat.rows();
    let mut by_g: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (r, &k) in rows.iter().zip(&sample.units) {
        by_g.entry(groups.labels()[k]).or_default().push(r);
    }
    let mut ss = vec![0.0; d];
    for members in by_g.values() {
        let m = members.len();
        for (s, v) in ss.iter_mut().zip(pointwise_s2(members, d)) {
            *s += v * (m.max(1) - 1) as f64;
        }
    }
    let f = srs_factor(groups.population(), n);
    let values = ss.into_iter().map(|s| f * s / (n - 1) as f64).collect();
    Ok(VarianceFunction::new(values, grid, VarianceKind::Estimated, "poststratified"))
}

/// Hansen-Hurwitz variance estimate over the ordered draws:
/// `1/(n(n-1)) sum_i (z_i - mean z)^2` with `z_i = u_{k_i} / p_{k_i}`.
pub fn hansen_hurwitz_variance(sample: &SampleDraw, u_hat: &LinearizedSet) -> Result<VarianceFunction> {
    let (n, p) = match &*sample.design {
        Design::Ppswr { n, p } => (*n, p),
        other => {
            return Err(Error::Variance(format!(
                "Hansen-Hurwitz needs a with-replacement draw, got {}",
                other.name()
            )))
        }
    };
    let draws = sample
        .draws
        .as_ref()
        .ok_or_else(|| Error::Variance("draw record missing".into()))?;
    hansen_hurwitz_from_draws(draws, &sample.units, u_hat, p, n)
}

/// Hansen-Hurwitz estimate from a raw draw sequence; `units` lists the
/// distinct units in the order of `u_hat`.
pub fn hansen_hurwitz_from_draws(
    draws: &[usize],
    units: &[usize],
    u_hat: &LinearizedSet,
    p: &[f64],
    n: usize,
) -> Result<VarianceFunction> {
    if n < 2 || draws.len() < 2 {
        return Err(Error::Variance("Hansen-Hurwitz needs at least two draws".into()));
    }
    let grid = grid_of(u_hat)?;
    let d = grid.len();
    let pos: HashMap<usize, usize> = units.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let z: Vec<Vec<f64>> = draws
        .iter()
        .map(|k| {
            let i = *pos.get(k).ok_or_else(|| Error::Variance(format!("drawn unit {k} missing")))?;
            Ok(u_hat.values[i].values().iter().map(|v| v / p[*k]).collect())
        })
        .collect::<Result<_>>()?;
    let nd = z.len() as f64;
    let mut mean = vec![0.0; d];
    for zi in &z {
        for (m, v) in mean.iter_mut().zip(zi) {
            *m += v / nd;
        }
    }
    let mut acc = vec![0.0; d];
    for zi in &z {
        for ((a, v), m) in acc.iter_mut().zip(zi).zip(&mean) {
            *a += (v - m) * (v - m);
        }
    }
    let values = acc.into_iter().map(|a| a / (nd * (nd - 1.0))).collect();
    Ok(VarianceFunction::new(values, grid, VarianceKind::Estimated, "ppswr"))
}
