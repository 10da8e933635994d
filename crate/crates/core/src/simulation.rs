//! Synthetic load-curve populations and the Monte Carlo design comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{pointwise_median, Curve, CurvePopulation, TimeGrid};
use crate::designs::{pps_weights_from_curves, Design, SampleDraw, StrataSpec};
use crate::error::{Error, Result};
use crate::estimators::WeightedSample;
use crate::linearization::{estimated_linearized_variables, linearized_variables, LinearizedSet};
use crate::median::{l1_median, MedianFit, SolverConfig};
use crate::rng::{derived_rng, derived_seed};
use crate::stratification::{
    kmeans_strata, optimal_allocation, proportional_allocation, quartile_strata, AllocationRule,
};
use crate::variance::{
    poststratified_variance_estimate, poststratified_variance_function, variance_estimate, variance_function,
    VarianceFunction,
};

/// Synthetic population settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub units: usize,
    pub days: usize,
    pub points_per_day: usize,
    /// Relative drop of the weekend level (days 6 and 7 of each week).
    pub weekend_dip: f64,
    /// Log-scale standard deviation of the unit consumption levels.
    pub scale_log_sd: f64,
    /// Number of consumption regimes, 1 to 4.
    pub regimes: usize,
    /// Standard deviation, in hours, of each unit's shift of its regime peaks.
    pub shape_jitter: f64,
    /// Log-scale standard deviation of each unit's peak amplitudes.
    pub amplitude_jitter: f64,
    /// Relative multiplicative noise per reading.
    pub noise_sd: f64,
    /// Log-scale standard deviation of the level change between weeks.
    pub week_drift: f64,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            units: 2000,
            days: 1,
            points_per_day: 48,
            weekend_dip: 0.3,
            scale_log_sd: 0.6,
            regimes: 4,
            shape_jitter: 0.5,
            amplitude_jitter: 0.15,
            noise_sd: 0.1,
            week_drift: 0.1,
            outlier_fraction: 0.01,
            outlier_magnitude: 8.0,
            seed: 1,
        }
    }
}

/// Population shares of the four regimes.
const REGIME_SHARES: [f64; 4] = [0.36, 0.13, 0.13, 0.38];
/// Level of each regime relative to the unit scale.
const REGIME_LEVELS: [f64; 4] = [1.0, 0.6, 1.6, 2.2];
/// How strongly the weekend dip hits each regime.
const WEEKEND_SENSITIVITY: [f64; 4] = [0.3, -0.1, 1.0, 0.2];

impl SynthConfig {
    pub fn grid_len(&self) -> usize {
        self.days * self.points_per_day
    }

    pub fn validate(&self) -> Result<()> {
        if self.units < 10 {
            return Err(Error::invalid("synthetic populations need at least 10 units"));
        }
        if self.days == 0 || self.points_per_day == 0 {
            return Err(Error::invalid("days and points_per_day must be positive"));
        }
        if !(0.0..=0.2).contains(&self.outlier_fraction) {
            return Err(Error::invalid("outlier_fraction must lie in [0, 0.2]"));
        }
        if !(1..=4).contains(&self.regimes) {
            return Err(Error::invalid("regimes must be between 1 and 4"));
        }
        if !(0.0..1.0).contains(&self.weekend_dip) {
            return Err(Error::invalid("weekend_dip must lie in [0, 1)"));
        }
        let sds = [
            self.scale_log_sd,
            self.shape_jitter,
            self.amplitude_jitter,
            self.noise_sd,
            self.week_drift,
        ];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || !(self.outlier_magnitude > 0.0) {
            return Err(Error::invalid("spreads must be finite and nonnegative, magnitude positive"));
        }
        Ok(())
    }
}

/// The two weeks of a synthetic population: `week1` is the auxiliary
/// information, `week2` the study variable.
#[derive(Debug, Clone)]
pub struct SynthPopulation {
    pub week1: CurvePopulation,
    pub week2: CurvePopulation,
    /// Planted regime of each unit (0-based).
    pub regime: Vec<usize>,
    pub outliers: Vec<usize>,
}

fn circular_gap(h: f64, c: f64) -> f64 {
    let d = (h - c).rem_euclid(24.0);
    d.min(24.0 - d)
}

fn bump(h: f64, c: f64, w: f64) -> f64 {
    let z = circular_gap(h, c) / w;
    (-0.5 * z * z).exp()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Daily shape of a regime at hour `h`, before normalization.
fn regime_shape(regime: usize, h: f64, shift: f64, amp: f64) -> f64 {
    let h = h - shift;
    match regime {
        0 => 0.5 + 1.6 * amp * bump(h, 2.5, 2.5),
        1 => 0.35 + amp * (0.9 * bump(h, 8.0, 1.3) + 1.6 * bump(h, 19.5, 1.8)),
        2 => 0.25 + 1.5 * amp * logistic((h - 8.0) / 0.7) * logistic((18.0 - h) / 0.7),
        _ => 1.0 + 0.15 * amp * (2.0 * PI * (h - 15.0) / 24.0).cos(),
    }
}

/// Unit daily profile with mean one over the day.
fn daily_profile(regime: usize, ppd: usize, shift: f64, amp: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..ppd)
        .map(|j| regime_shape(regime, (j as f64 + 0.5) * 24.0 / ppd as f64, shift, amp))
        .collect();
    let mean = raw.iter().sum::<f64>() / ppd as f64;
    raw.into_iter().map(|v| v / mean).collect()
}

/// Deterministic synthetic load curves for two consecutive weeks.
pub fn synth_population(cfg: &SynthConfig) -> Result<SynthPopulation> {
    cfg.validate()?;
    let grid = Arc::new(TimeGrid::equally_spaced(cfg.grid_len(), 1.0)?);
    let mut rng = derived_rng(cfg.seed, 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let scales = LogNormal::new(0.0, cfg.scale_log_sd).map_err(|e| Error::invalid(e.to_string()))?;

    let shares = &REGIME_SHARES[..cfg.regimes];
    let share_total: f64 = shares.iter().sum();
    let n_outliers = (cfg.outlier_fraction * cfg.units as f64).round() as usize;

    let mut week1 = Vec::with_capacity(cfg.units);
    let mut week2 = Vec::with_capacity(cfg.units);
    let mut regime = Vec::with_capacity(cfg.units);
    for _ in 0..cfg.units {
        let mut x = rng.random::<f64>() * share_total;
        let mut h = cfg.regimes - 1;
        for (i, s) in shares.iter().enumerate() {
            if x < *s {
                h = i;
                break;
            }
            x -= s;
        }
        let level = scales.sample(&mut rng) * REGIME_LEVELS[h];
        let shift = cfg.shape_jitter * std.sample(&mut rng);
        let amp = (cfg.amplitude_jitter * std.sample(&mut rng)).exp();
        let drift = (cfg.week_drift * std.sample(&mut rng)).exp();
        let profile = daily_profile(h, cfg.points_per_day, shift, amp);
        let week = |scale: f64, rng: &mut _| -> Vec<f64> {
            let mut out = Vec::with_capacity(cfg.grid_len());
            for day in 0..cfg.days {
                let weekend = if day % 7 >= 5 {
                    1.0 - cfg.weekend_dip * WEEKEND_SENSITIVITY[h]
                } else {
                    1.0
                };
                for &p in &profile {
                    let noise = 1.0 + cfg.noise_sd * std.sample(rng);
                    out.push((scale * weekend * p * noise).max(0.0));
                }
            }
            out
        };
        week1.push(week(level, &mut rng));
        week2.push(week(level * drift, &mut rng));
        regime.push(h);
    }
    let outliers: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.units, n_outliers).into_vec();
    let mut outliers = outliers;
    outliers.sort_unstable();
    for &k in &outliers {
        for v in week1[k].iter_mut().chain(week2[k].iter_mut()) {
            *v *= cfg.outlier_magnitude;
        }
    }
    Ok(SynthPopulation {
        week1: CurvePopulation::new(grid.clone(), week1)?,
        week2: CurvePopulation::new(grid, week2)?,
        regime,
        outliers,
    })
}

/// `(1/D) sum_d |a(t_d) - b(t_d)|`.
pub fn loss_r_median(estimate: &Curve, target: &Curve) -> Result<f64> {
    if !estimate.shares_grid(target) {
        return Err(Error::GridMismatch);
    }
    Ok(mean_abs(estimate.values(), target.values()))
}

/// `sum_d q_d |a(t_d) - b(t_d)|`, the quadrature form of the integral.
pub fn loss_r_median_quadrature(estimate: &Curve, target: &Curve) -> Result<f64> {
    if !estimate.shares_grid(target) {
        return Err(Error::GridMismatch);
    }
    let g = estimate.grid();
    let diff: Vec<f64> = estimate
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(g.integrate(&diff))
}

/// `(1/D) sum_d |var_hat(t_d) - var(t_d)|`.
pub fn loss_r_variance(estimate: &VarianceFunction, target: &VarianceFunction) -> Result<f64> {
    if estimate.values.len() != target.values.len() {
        return Err(Error::GridMismatch);
    }
    Ok(mean_abs(&estimate.values, &target.values))
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Designs compared by [`monte_carlo_compare`], configured from the week-1
/// auxiliary curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareDesign {
    Census,
    Srswor,
    /// Systematic, frame ordered by week-1 mean consumption.
    Sys,
    /// k-means strata on week-1 linearized variables.
    StratUProp,
    StratUOptim,
    /// Quartile strata of week-1 maximum consumption.
    StratXProp,
    StratXOptim,
    /// With replacement, `p_k` proportional to week-1 mean consumption.
    Pps,
    /// SRSWOR poststratified on the week-1 linearized-variable strata.
    Post,
}

impl CompareDesign {
    pub const ALL: [CompareDesign; 9] = [
        Self::Census,
        Self::Srswor,
        Self::Sys,
        Self::StratUProp,
        Self::StratUOptim,
        Self::StratXProp,
        Self::StratXOptim,
        Self::Pps,
        Self::Post,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Census => "census",
            Self::Srswor => "srswor",
            Self::Sys => "sys",
            Self::StratUProp => "strat-u-prop",
            Self::StratUOptim => "strat-u-optim",
            Self::StratXProp => "strat-x-prop",
            Self::StratXOptim => "strat-x-optim",
            Self::Pps => "pps",
            Self::Post => "post",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    fn stream(self) -> u64 {
        100 + Self::ALL.iter().position(|&d| d == self).unwrap() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Number of strata for the stratified and poststratified designs.
    pub strata: usize,
    pub designs: Vec<CompareDesign>,
    /// Also estimate the variance function in every replicate.
    pub variance: bool,
    /// Lower bound applied to inclusion probabilities in the estimators.
    pub pi_floor: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n: 200,
            reps: 300,
            seed: 1,
            strata: 4,
            designs: CompareDesign::ALL.to_vec(),
            variance: true,
            pi_floor: 0.0,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl LossSummary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub distinct_units: usize,
    pub iterations: usize,
    pub median_loss: Option<f64>,
    pub variance_loss: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub estimate: Option<Vec<f64>>,
    #[serde(skip)]
    pub variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    pub design: CompareDesign,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<usize>>,
    pub median_loss: Option<LossSummary>,
    pub variance_loss: Option<LossSummary>,
    pub failures: usize,
    pub variance_failures: usize,
    /// Quadrature integral of the population variance function.
    pub true_variance_integral: Option<f64>,
    #[serde(skip)]
    pub true_variance: Option<Vec<f64>>,
    #[serde(skip)]
    pub replicates: Vec<Replicate>,
}

impl DesignResult {
    pub fn losses(&self) -> Vec<f64> {
        self.replicates.iter().filter_map(|r| r.median_loss).collect()
    }

    /// Pointwise Monte Carlo variance of the successful estimates.
    pub fn empirical_variance(&self) -> Vec<f64> {
        let est: Vec<&Vec<f64>> = self.replicates.iter().filter_map(|r| r.estimate.as_ref()).collect();
        pointwise_var(&est)
    }

    /// Pointwise average of the variance estimates.
    pub fn mean_variance_estimate(&self) -> Option<Vec<f64>> {
        let est: Vec<&Vec<f64>> = self.replicates.iter().filter_map(|r| r.variance.as_ref()).collect();
        let first = est.first()?;
        let mut m = vec![0.0; first.len()];
        for e in &est {
            for (a, v) in m.iter_mut().zip(e.iter()) {
                *a += v / est.len() as f64;
            }
        }
        Some(m)
    }
}

fn pointwise_var(rows: &[&Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; first.len()];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / (n - 1.0).max(1.0);
        }
    }
    var
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub population: usize,
    pub grid_len: usize,
    pub truth: MedianFit,
    /// Sizes of the linearized-variable strata and of the quartile strata.
    pub u_strata_sizes: Vec<usize>,
    pub x_strata_sizes: Vec<usize>,
    pub designs: Vec<DesignResult>,
}

impl MonteCarloReport {
    pub fn design(&self, d: CompareDesign) -> Option<&DesignResult> {
        self.designs.iter().find(|r| r.design == d)
    }

    /// Per-replicate losses as CSV.
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("design,replicate,seed,distinct_units,median_loss,variance_loss,error\n");
        for d in &self.designs {
            for r in &d.replicates {
                let f = |v: Option<f64>| v.map(crate::io::fmt_num).unwrap_or_default();
                let err = r.error.as_deref().unwrap_or("").replace(['"', ','], " ");
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    d.design.name(),
                    r.index,
                    r.seed,
                    r.distinct_units,
                    f(r.median_loss),
                    f(r.variance_loss),
                    err
                ));
            }
        }
        out
    }
}

/// Week-1 quantities every design is configured from, and the week-2 truth.
pub struct Protocol<'a> {
    pub week1: &'a CurvePopulation,
    pub week2: &'a CurvePopulation,
    pub truth: MedianFit,
    pub truth_u: LinearizedSet,
    pub week1_median: Curve,
    pub week1_u: LinearizedSet,
    pub u_strata: StrataSpec,
    pub x_strata: StrataSpec,
}

impl<'a> Protocol<'a> {
    /// Week-1 linearized variables are computed about the week-1 median.
    pub fn prepare(week1: &'a CurvePopulation, week2: &'a CurvePopulation, cfg: &MonteCarloConfig) -> Result<Self> {
        if week1.len() != week2.len() || week1.grid() != week2.grid() && week1.grid().len() != week2.grid().len() {
            return Err(Error::invalid("the two weeks must cover the same units on matching grids"));
        }
        let solver = truth_solver(cfg);
        let ones = vec![1.0; week1.len()];
        let m1 = l1_median(week1.curves(), &ones, &solver)?;
        let week1_u = linearized_variables(week1, &m1.median)?;
        let u_strata = kmeans_strata(&week1_u.values, cfg.strata, derived_seed(cfg.seed, 1))?;
        let x_strata = quartile_strata(&week1.unit_maxima(), cfg.strata)?;
        let truth = l1_median(week2.curves(), &ones, &solver)?;
        let truth_u = linearized_variables(week2, &truth.median)?;
        Ok(Self {
            week1,
            week2,
            truth,
            truth_u,
            week1_median: m1.median,
            week1_u,
            u_strata,
            x_strata,
        })
    }

    /// The sampling design behind `d`, with its allocation when stratified.
    pub fn design(&self, d: CompareDesign, n: usize) -> Result<(Arc<Design>, Option<Vec<usize>>)> {
        let big_n = self.week2.len();
        let strat = |strata: &StrataSpec, alloc: Vec<usize>| -> Result<(Arc<Design>, Option<Vec<usize>>)> {
            Ok((Arc::new(Design::stratified(strata.clone(), alloc.clone())?), Some(alloc)))
        };
        match d {
            CompareDesign::Census => Ok((Arc::new(Design::srswor(big_n, big_n)?), None)),
            CompareDesign::Srswor | CompareDesign::Post => Ok((Arc::new(Design::srswor(big_n, n)?), None)),
            CompareDesign::Sys => Ok((Arc::new(Design::systematic(self.week1.unit_means(), n)?), None)),
            CompareDesign::StratUProp => strat(&self.u_strata, proportional_allocation(self.u_strata.sizes(), n)?.n_h),
            CompareDesign::StratUOptim => strat(
                &self.u_strata,
                optimal_allocation(&self.u_strata, &self.week1_u.values, n, AllocationRule::UOptim)?.n_h,
            ),
            CompareDesign::StratXProp => strat(&self.x_strata, proportional_allocation(self.x_strata.sizes(), n)?.n_h),
            CompareDesign::StratXOptim => strat(
                &self.x_strata,
                optimal_allocation(&self.x_strata, self.week1.curves(), n, AllocationRule::XOptim)?.n_h,
            ),
            CompareDesign::Pps => Ok((Arc::new(Design::ppswr(pps_weights_from_curves(self.week1)?, n)?), None)),
        }
    }

    /// Population variance function of the estimator under `d`.
    pub fn true_variance(&self, d: CompareDesign, design: &Design) -> Result<VarianceFunction> {
        match d {
            CompareDesign::Post => poststratified_variance_function(&self.truth_u, &self.u_strata, design.sample_size()),
            _ => variance_function(&self.truth_u, design),
        }
    }

    fn weighted<'s>(&'s self, d: CompareDesign, draw: &SampleDraw, cfg: &MonteCarloConfig) -> Result<WeightedSample<'s>> {
        match d {
            CompareDesign::Post => WeightedSample::poststratified(draw, self.week2, &self.u_strata),
            _ => WeightedSample::horvitz_thompson_floored(draw, self.week2, cfg.pi_floor),
        }
    }

    /// One draw under `d` and the median estimate from it.
    pub fn estimate(
        &self,
        d: CompareDesign,
        design: &Arc<Design>,
        seed: u64,
        cfg: &MonteCarloConfig,
    ) -> Result<(SampleDraw, MedianFit)> {
        let draw = design.draw(seed)?;
        let solver = SolverConfig::default().with_tol(cfg.tol).with_max_iter(cfg.max_iter);
        let fit = self.weighted(d, &draw, cfg)?.fit(&solver)?;
        Ok((draw, fit))
    }

    /// Estimated variance function for a fitted replicate.
    pub fn estimate_variance(
        &self,
        d: CompareDesign,
        draw: &SampleDraw,
        fit: &MedianFit,
        cfg: &MonteCarloConfig,
    ) -> Result<VarianceFunction> {
        let ws = self.weighted(d, draw, cfg)?;
        let u_hat = estimated_linearized_variables(&ws, &fit.median)?;
        match d {
            CompareDesign::Post => poststratified_variance_estimate(draw, &u_hat, &self.u_strata),
            _ => variance_estimate(draw, &u_hat),
        }
    }
}

fn truth_solver(cfg: &MonteCarloConfig) -> SolverConfig {
    SolverConfig::default().with_tol(cfg.tol.min(1e-10)).with_max_iter(cfg.max_iter.max(500))
}

/// Seed of replicate `r` of design `d` under master seed `seed`.
pub fn replicate_seed(seed: u64, d: CompareDesign, r: usize) -> u64 {
    derived_seed(derived_seed(seed, d.stream()), r as u64)
}

/// Draw, estimate and score every design `reps` times. Replicates run on
/// the current rayon pool; results are stored by replicate index, so the
/// report does not depend on scheduling.
pub fn monte_carlo_compare(
    week1: &CurvePopulation,
    week2: &CurvePopulation,
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloReport> {
    if cfg.reps == 0 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let protocol = Protocol::prepare(week1, week2, cfg)?;
    let mut designs = Vec::with_capacity(cfg.designs.len());
    for &d in &cfg.designs {
        designs.push(run_design(&protocol, d, cfg)?);
    }
    Ok(MonteCarloReport {
        config: cfg.clone(),
        population: week2.len(),
        grid_len: week2.grid().len(),
        truth: protocol.truth.clone(),
        u_strata_sizes: protocol.u_strata.sizes().to_vec(),
        x_strata_sizes: protocol.x_strata.sizes().to_vec(),
        designs,
    })
}

fn run_design(protocol: &Protocol<'_>, d: CompareDesign, cfg: &MonteCarloConfig) -> Result<DesignResult> {
    let (design, allocation) = protocol.design(d, cfg.n)?;
    let truth_var = if cfg.variance {
        Some(protocol.true_variance(d, &design)?)
    } else {
        None
    };
    let replicates: Vec<Replicate> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, d, r);
            let mut rep = Replicate {
                index: r,
                seed,
                distinct_units: 0,
                iterations: 0,
                median_loss: None,
                variance_loss: None,
                error: None,
                estimate: None,
                variance: None,
            };
            match protocol.estimate(d, &design, seed, cfg) {
                Ok((draw, fit)) => {
                    rep.distinct_units = draw.len();
                    rep.iterations = fit.iterations;
                    rep.median_loss = loss_r_median(&fit.median, &protocol.truth.median).ok();
                    rep.estimate = Some(fit.median.values().to_vec());
                    if let Some(tv) = &truth_var {
                        match protocol.estimate_variance(d, &draw, &fit, cfg) {
                            Ok(v) => {
                                rep.variance_loss = loss_r_variance(&v, tv).ok();
                                rep.variance = Some(v.values);
                            }
                            Err(e) => rep.error = Some(format!("variance: {e}")),
                        }
                    }
                }
                Err(e) => rep.error = Some(e.to_string()),
            }
            rep
        })
        .collect();
    let losses: Vec<f64> = replicates.iter().filter_map(|r| r.median_loss).collect();
    let vlosses: Vec<f64> = replicates.iter().filter_map(|r| r.variance_loss).collect();
    Ok(DesignResult {
        design: d,
        seed: derived_seed(cfg.seed, d.stream()),
        allocation,
        median_loss: LossSummary::from_values(&losses),
        variance_loss: LossSummary::from_values(&vlosses),
        failures: replicates.iter().filter(|r| r.median_loss.is_none()).count(),
        variance_failures: if cfg.variance {
            replicates.iter().filter(|r| r.median_loss.is_some() && r.variance_loss.is_none()).count()
        } else {
            0
        },
        true_variance_integral: truth_var.as_ref().map(|v| v.integral()),
        true_variance: truth_var.map(|v| v.values),
        replicates,
    })
}

/// Week-1 coordinates of the pointwise and spatial medians, computed on
/// week 1 alone and on both weeks concatenated in time.
#[derive(Debug, Clone, Serialize)]
pub struct TwoWeekContrast {
    /// Largest change of a week-1 coordinate of the pointwise median.
    pub pointwise_change: f64,
    /// Largest change of a week-1 coordinate of the spatial median.
    pub spatial_change: f64,
}

pub fn two_week_contrast(week1: &CurvePopulation, week2: &CurvePopulation, cfg: &SolverConfig) -> Result<TwoWeekContrast> {
    let both = week1.concat_time(week2)?;
    let d = week1.grid().len();
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let pw1 = pointwise_median(week1, None)?;
    let pw2 = pointwise_median(&both, None)?;
    let ones = vec![1.0; week1.len()];
    let sp1 = l1_median(week1.curves(), &ones, cfg)?;
    let sp2 = l1_median(both.curves(), &ones, cfg)?;
    Ok(TwoWeekContrast {
        pointwise_change: sup(pw1.values(), &pw2.values()[..d]),
        spatial_change: sup(sp1.median.values(), &sp2.median.values()[..d]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            units: 300,
            points_per_day: 12,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_population(&small(3)).unwrap();
        let b = synth_population(&small(3)).unwrap();
        assert_eq!(a.week1.curves(), b.week1.curves());
        assert_eq!(a.week2.curves(), b.week2.curves());
        let c = synth_population(&small(4)).unwrap();
        assert_ne!(a.week2.curves(), c.week2.curves());
        assert_eq!(a.outliers.len(), 3);
    }

    #[test]
    fn noiseless_single_regime_is_scaled_profile() {
        let cfg = SynthConfig {
            regimes: 1,
            shape_jitter: 0.0,
            amplitude_jitter: 0.0,
            noise_sd: 0.0,
            outlier_fraction: 0.0,
            ..small(5)
        };
        let pop = synth_population(&cfg).unwrap();
        let base = pop.week1.curve(0).values().to_vec();
        for c in pop.week1.curves().iter().chain(pop.week2.curves()) {
            let ratio = c.values()[0] / base[0];
            for (v, b) in c.values().iter().zip(&base) {
                assert!((v - ratio * b).abs() < 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn weekend_dip_shows_in_the_mean() {
        let cfg = SynthConfig {
            days: 7,
            points_per_day: 8,
            ..small(6)
        };
        let pop = synth_population(&cfg).unwrap();
        let mean = crate::curves::mean_curve(&pop.week1);
        let day_mean = |d: usize| mean.values()[d * 8..(d + 1) * 8].iter().sum::<f64>() / 8.0;
        let weekday = (0..5).map(day_mean).sum::<f64>() / 5.0;
        let weekend = (5..7).map(day_mean).sum::<f64>() / 2.0;
        assert!(weekend < weekday);
    }

    #[test]
    fn invalid_configs() {
        assert!(synth_population(&SynthConfig { units: 5, ..small(1) }).is_err());
        assert!(synth_population(&SynthConfig { outlier_fraction: 0.3, ..small(1) }).is_err());
        assert!(synth_population(&SynthConfig { regimes: 0, ..small(1) }).is_err());
    }

    #[test]
    fn losses() {
        let g = Arc::new(TimeGrid::equally_spaced(4, 1.0).unwrap());
        let a = Curve::new(vec![1.0, -2.0, 0.5, 3.0], g.clone()).unwrap();
        assert_eq!(loss_r_median(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v - 0.7);
        assert!((loss_r_median(&shifted, &a).unwrap() - 0.7).abs() < 1e-15);
        let b = Curve::new(vec![0.0, 1.0, 2.0, -1.0], g).unwrap();
        let oracle = (1.0 + 3.0 + 1.5 + 4.0) / 4.0;
        assert!((loss_r_median(&a, &b).unwrap() - oracle).abs() < 1e-15);
        assert!((loss_r_median_quadrature(&a, &b).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn summary_quartiles() {
        let s = LossSummary::from_values(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.mean), (2.0, 3.0, 4.0, 3.0));
        assert!(LossSummary::from_values(&[]).is_none());
    }

    #[test]
    fn census_replicate_has_zero_loss() {
        let pop = synth_population(&small(7)).unwrap();
        let cfg = MonteCarloConfig {
            n: 30,
            reps: 1,
            designs: vec![CompareDesign::Census],
            ..MonteCarloConfig::default()
        };
        let report = monte_carlo_compare(&pop.week1, &pop.week2, &cfg).unwrap();
        let d = report.design(CompareDesign::Census).unwrap();
        assert_eq!(d.median_loss.as_ref().unwrap().max, 0.0);
        assert_eq!(d.variance_loss.as_ref().unwrap().max, 0.0);
    }

    #[test]
    fn report_is_reproducible() {
        let pop = synth_population(&small(8)).unwrap();
        let cfg = MonteCarloConfig {
            n: 40,
            reps: 6,
            ..MonteCarloConfig::default()
        };
        let a = monte_carlo_compare(&pop.week1, &pop.week2, &cfg).unwrap();
        let b = monte_carlo_compare(&pop.week1, &pop.week2, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.losses_csv(), b.losses_csv());
        for d in &a.designs {
            assert_eq!(d.replicates.len(), 6);
            assert!(d.losses().iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn pointwise_median_ignores_later_week() {
        let pop = synth_population(&small(9)).unwrap();
        let c = two_week_contrast(&pop.week1, &pop.week2, &SolverConfig::default()).unwrap();
        assert_eq!(c.pointwise_change, 0.0);
        assert!(c.spatial_change > 1e-6);
    }
}
