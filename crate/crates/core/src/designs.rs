//! Sampling designs: simple random sampling without replacement, systematic
//! sampling on an ordered frame, stratified SRSWOR and with-replacement
//! sampling proportional to size. Each draw carries the first-order
//! inclusion probabilities of the selected units.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curves::CurvePopulation;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SeededRng};

/// Tolerance on `sum p_k = 1`.
pub const PPS_SUM_TOL: f64 = 1e-10;

/// Stratum membership; labels are `0..count`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataSpec {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl StrataSpec {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("strata need at least one unit"));
        }
        let h = labels.iter().max().unwrap() + 1;
        let mut sizes = vec![0; h];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("stratum {} is empty", empty + 1)));
        }
        Ok(Self { labels, sizes })
    }

    /// One stratum holding every unit.
    pub fn single(population: usize) -> Self {
        Self {
            labels: vec![0; population],
            sizes: vec![population],
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn population(&self) -> usize {
        self.labels.len()
    }

    /// Unit indices of every stratum, increasing.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count()];
        for (k, &h) in self.labels.iter().enumerate() {
            out[h].push(k);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Design {
    Srswor {
        population: usize,
        n: usize,
    },
    Systematic {
        n: usize,
        #[serde(skip)]
        order_key: Vec<f64>,
    },
    Stratified {
        #[serde(skip)]
        strata: StrataSpec,
        allocation: Vec<usize>,
    },
    Ppswr {
        n: usize,
        #[serde(skip)]
        p: Vec<f64>,
    },
}

/// Joint inclusion probability, or the rule to use when no exact value
/// exists for the design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointInclusion {
    Exact(f64),
    /// Systematic sampling: pairs outside a common systematic sample have
    /// zero joint probability; variance uses the SRSWOR formulas instead.
    UseSrsworApproximation,
    /// With-replacement design: use the Hansen-Hurwitz variance.
    UseHansenHurwitz,
}

impl Design {
    pub fn srswor(population: usize, n: usize) -> Result<Self> {
        if n == 0 || n > population {
            return Err(Error::design(format!("SRSWOR needs 1 <= n <= N, got n={n}, N={population}")));
        }
        Ok(Design::Srswor { population, n })
    }

    pub fn systematic(order_key: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || n > order_key.len() {
            return Err(Error::design(format!(
                "systematic sampling needs 1 <= n <= N, got n={n}, N={}",
                order_key.len()
            )));
        }
        if order_key.iter().any(|v| v.is_nan()) {
            return Err(Error::design("ordering key contains NaN"));
        }
        Ok(Design::Systematic { n, order_key })
    }

    pub fn stratified(strata: StrataSpec, allocation: Vec<usize>) -> Result<Self> {
        if allocation.len() != strata.count() {
            return Err(Error::design(format!(
                "{} strata but {} allocations",
                strata.count(),
                allocation.len()
            )));
        }
        for (h, (&nh, &big)) in allocation.iter().zip(strata.sizes()).enumerate() {
            if nh == 0 || nh > big {
                return Err(Error::design(format!(
                    "stratum {} allocation {nh} outside 1..={big}",
                    h + 1
                )));
            }
        }
        Ok(Design::Stratified { strata, allocation })
    }

    pub fn ppswr(p: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::design("PPS needs at least one draw"));
        }
        if let Some(k) = p.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::design(format!("selection probability of unit {} is not positive", k + 1)));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > PPS_SUM_TOL {
            return Err(Error::design(format!("selection probabilities sum to {s}, not 1")));
        }
        Ok(Design::Ppswr { n, p })
    }

    pub fn population(&self) -> usize {
        match self {
            Design::Srswor { population, .. } => *population,
            Design::Systematic { order_key, .. } => order_key.len(),
            Design::Stratified { strata, .. } => strata.population(),
            Design::Ppswr { p, .. } => p.len(),
        }
    }

    /// Sample size (number of draws for PPS).
    pub fn sample_size(&self) -> usize {
        match self {
            Design::Srswor { n, .. } | Design::Systematic { n, .. } | Design::Ppswr { n, .. } => *n,
            Design::Stratified { allocation, .. } => allocation.iter().sum(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Design::Srswor { .. } => "srswor",
            Design::Systematic { .. } => "systematic",
            Design::Stratified { .. } => "stratified",
            Design::Ppswr { .. } => "ppswr",
        }
    }

    pub fn is_fixed_size(&self) -> bool {
        !matches!(self, Design::Ppswr { .. })
    }

    /// First-order inclusion probability of unit `k`.
    pub fn pi(&self, k: usize) -> f64 {
        match self {
            Design::Srswor { population, n } => *n as f64 / *population as f64,
            Design::Systematic { n, order_key } => *n as f64 / order_key.len() as f64,
            Design::Stratified { strata, allocation } => {
                let h = strata.labels[k];
                allocation[h] as f64 / strata.sizes[h] as f64
            }
            Design::Ppswr { n, p } => pps_inclusion(p[k], *n),
        }
    }

    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        (0..self.population()).map(|k| self.pi(k)).collect()
    }

    pub fn joint_inclusion(&self, k: usize, l: usize) -> JointInclusion {
        if k == l {
            return JointInclusion::Exact(self.pi(k));
        }
        match self {
            Design::Srswor { population, n } => {
                let (n, big) = (*n as f64, *population as f64);
                JointInclusion::Exact(n * (n - 1.0) / (big * (big - 1.0)))
            }
            Design::Stratified { strata, allocation } => {
                let (hk, hl) = (strata.labels[k], strata.labels[l]);
                if hk == hl {
                    let nh = allocation[hk] as f64;
                    let big = strata.sizes[hk] as f64;
                    JointInclusion::Exact(nh * (nh - 1.0) / (big * (big - 1.0)))
                } else {
                    JointInclusion::Exact(self.pi(k) * self.pi(l))
                }
            }
            Design::Systematic { .. } => JointInclusion::UseSrsworApproximation,
            Design::Ppswr { .. } => JointInclusion::UseHansenHurwitz,
        }
    }

    pub fn draw(self: &Arc<Self>, seed: u64) -> Result<SampleDraw> {
        let mut rng = rng_from_seed(seed);
        self.draw_with(&mut rng, seed)
    }

    /// Draws with a caller-provided generator; `seed` is only recorded.
    pub fn draw_with(self: &Arc<Self>, rng: &mut SeededRng, seed: u64) -> Result<SampleDraw> {
        let (units, draws) = match &**self {
            Design::Srswor { population, n } => (srswor_indices(rng, *population, *n), None),
            Design::Systematic { n, order_key } => {
                let ordered = order_frame(rng, order_key);
                let a = ordered.len() as f64 / *n as f64;
                let start = rng.random_range(0.0..a);
                let mut units: Vec<usize> = systematic_positions(ordered.len(), *n, start)
                    .into_iter()
                    .map(|r| ordered[r])
                    .collect();
                units.sort_unstable();
                (units, None)
            }
            Design::Stratified { strata, allocation } => {
                let mut units = Vec::with_capacity(allocation.iter().sum());
                for (members, &nh) in strata.members().iter().zip(allocation) {
                    for i in srswor_indices(rng, members.len(), nh) {
                        units.push(members[i]);
                    }
                }
                units.sort_unstable();
                (units, None)
            }
            Design::Ppswr { n, p } => {
                let dist = WeightedIndex::new(p).map_err(|e| Error::design(e.to_string()))?;
                let draws: Vec<usize> = (0..*n).map(|_| dist.sample(rng)).collect();
                let mut units = draws.clone();
                units.sort_unstable();
                units.dedup();
                (units, Some(draws))
            }
        };
        let pi = units.iter().map(|&k| self.pi(k)).collect();
        let multiplicities = draws.as_ref().map(|d: &Vec<usize>| {
            let mut counts = BTreeMap::new();
            for &k in d {
                *counts.entry(k).or_insert(0u32) += 1;
            }
            units.iter().map(|k| counts[k]).collect()
        });
        Ok(SampleDraw {
            units,
            pi,
            multiplicities,
            draws,
            design: self.clone(),
            seed,
        })
    }
}

/// `1 - (1 - p)^n`, the probability that a unit appears at least once.
pub fn pps_inclusion(p: f64, n: usize) -> f64 {
    -((n as f64) * (-p).ln_1p()).exp_m1()
}

fn srswor_indices(rng: &mut SeededRng, population: usize, n: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, population, n).into_vec();
    v.sort_unstable();
    v
}

/// Frame order: increasing key, ties in a seeded random order.
fn order_frame(rng: &mut SeededRng, key: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..key.len()).collect();
    idx.shuffle(rng);
    idx.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
    idx
}

/// Ranks (0-based) picked by a systematic pass with real step `N/n` and
/// real start in `[0, N/n)`: `floor(start + j N/n)`, `j = 0..n`. Each rank
/// is hit with probability exactly `n/N` when the start is uniform.
pub fn systematic_positions(population: usize, n: usize, start: f64) -> Vec<usize> {
    let a = population as f64 / n as f64;
    (0..n)
        .map(|j| ((start + j as f64 * a).floor() as usize).min(population - 1))
        .collect()
}

/// A realized sample.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    /// Distinct selected units, increasing.
    pub units: Vec<usize>,
    /// Inclusion probability of each selected unit.
    pub pi: Vec<f64>,
    /// Draw counts per distinct unit (with-replacement designs).
    pub multiplicities: Option<Vec<u32>>,
    /// Units in draw order (with-replacement designs).
    pub draws: Option<Vec<usize>>,
    pub design: Arc<Design>,
    pub seed: u64,
}

impl SampleDraw {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Horvitz-Thompson weights `1/pi_k`.
    pub fn ht_weights(&self) -> Vec<f64> {
        self.pi.iter().map(|p| 1.0 / p).collect()
    }

    pub fn is_census(&self) -> bool {
        self.units.len() == self.design.population() && self.pi.iter().all(|&p| p == 1.0)
    }
}

pub fn draw_srswor(population: usize, n: usize, seed: u64) -> Result<SampleDraw> {
    Arc::new(Design::srswor(population, n)?).draw(seed)
}

pub fn draw_systematic(order_key: &[f64], n: usize, seed: u64) -> Result<SampleDraw> {
    Arc::new(Design::systematic(order_key.to_vec(), n)?).draw(seed)
}

pub fn draw_stratified(strata: &StrataSpec, allocation: &[usize], seed: u64) -> Result<SampleDraw> {
    Arc::new(Design::stratified(strata.clone(), allocation.to_vec())?).draw(seed)
}

pub fn draw_ppswr(p: &[f64], n: usize, seed: u64) -> Result<SampleDraw> {
    Arc::new(Design::ppswr(p.to_vec(), n)?).draw(seed)
}

/// Selection probabilities proportional to each unit's average reading.
pub fn pps_weights_from_curves(aux: &CurvePopulation) -> Result<Vec<f64>> {
    let means = aux.unit_means();
    if let Some(k) = means.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::design(format!(
            "unit {} has nonpositive mean {}; PPS needs positive sizes",
            aux.ids()[k],
            means[k]
        )));
    }
    let total: f64 = means.iter().sum();
    Ok(means.into_iter().map(|m| m / total).collect())
}

pub fn joint_inclusion(design: &Design, k: usize, l: usize) -> JointInclusion {
    design.joint_inclusion(k, l)
}

/// Design description as read from JSON.
///
/// ```json
/// {"type": "stratified", "n": 200, "seed": 7, "strata": "strata.csv", "alloc": "prop"}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DesignSpec {
    #[serde(rename = "type")]
    pub kind: DesignKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Path of a strata CSV (`unit_id,stratum`) for stratified designs and
    /// poststratification groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<String>,
    /// Frame ordering for systematic sampling: `mean` (default) or `max` of
    /// the auxiliary curves, or `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_key_column: Option<String>,
    /// Size measure for PPS: `mean` of the auxiliary curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_source: Option<String>,
    /// Allocation for stratified designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alloc: Option<AllocSpec>,
    /// Auxiliary population CSV; defaults to the study population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srswor,
    Systematic,
    Stratified,
    Ppswr,
    Poststratified,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AllocSpec {
    Rule(String),
    Explicit(Vec<usize>),
}
