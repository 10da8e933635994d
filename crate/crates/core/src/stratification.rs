//! Strata construction and sample allocation.

use std::borrow::Borrow;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{Curve, TimeGrid};
use crate::designs::StrataSpec;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AllocationRule {
    #[serde(rename = "PROP")]
    Prop,
    #[serde(rename = "u-OPTIM")]
    UOptim,
    #[serde(rename = "x-OPTIM")]
    XOptim,
}

impl AllocationRule {
    pub fn label(self) -> &'static str {
        match self {
            Self::Prop => "PROP",
            Self::UOptim => "u-OPTIM",
            Self::XOptim => "x-OPTIM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub n_h: Vec<usize>,
    pub rule: AllocationRule,
    pub total: usize,
    /// Some stratum rounded to zero and was lifted to one unit.
    pub repaired: bool,
    /// Every within-stratum variance was zero; proportional allocation used.
    pub fell_back: bool,
}

/// Integer allocation of `n` with shares proportional to `shares`, capped at
/// `caps`, at least one unit per stratum.
fn allocate(shares: &[f64], caps: &[usize], n: usize) -> Result<(Vec<usize>, bool)> {
    let h = shares.len();
    let cap_total: usize = caps.iter().sum();
    if n > cap_total {
        return Err(Error::invalid(format!("n = {n} exceeds the population size {cap_total}")));
    }
    if n < h {
        return Err(Error::invalid(format!("n = {n} cannot give one unit to each of {h} strata")));
    }
    let mut out = vec![0usize; h];
    let mut fixed = vec![false; h];
    loop {
        let left = n - fixed.iter().zip(&out).filter(|(f, _)| **f).map(|(_, &v)| v).sum::<usize>();
        let free: Vec<usize> = (0..h).filter(|&i| !fixed[i]).collect();
        let mass: f64 = free.iter().map(|&i| shares[i]).sum();
        let ideal: Vec<f64> = free
            .iter()
            .map(|&i| if mass > 0.0 { left as f64 * shares[i] / mass } else { 0.0 })
            .collect();
        let rounded = largest_remainder(&ideal, left);
        let mut capped = false;
        for (&i, &v) in free.iter().zip(&rounded) {
            out[i] = v;
            if v > caps[i] {
                out[i] = caps[i];
                fixed[i] = true;
                capped = true;
            }
        }
        if !capped {
            break;
        }
    }
    let mut repaired = false;
    for i in 0..h {
        if out[i] == 0 {
            let donor = (0..h)
                .filter(|&j| out[j] > 1)
                .max_by(|&a, &b| out[a].cmp(&out[b]).then(b.cmp(&a)))
                .expect("n >= H guarantees a donor");
            out[donor] -= 1;
            out[i] = 1;
            repaired = true;
        }
    }
    Ok((out, repaired))
}

/// Floors of `ideal` plus one unit to each of the largest fractional parts
/// until the total is `n`; ties go to the lower index.
fn largest_remainder(ideal: &[f64], n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// `n_h = n N_h / N` rounded by largest remainders.
pub fn proportional_allocation(sizes: &[usize], n: usize) -> Result<Allocation> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("stratum sizes must be positive"));
    }
    let shares: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let (n_h, repaired) = allocate(&shares, sizes, n)?;
    Ok(Allocation {
        n_h,
        rule: AllocationRule::Prop,
        total: n,
        repaired,
        fell_back: false,
    })
}

/// `n_h` proportional to `N_h sqrt(int S^2_{z,U_h}(t) dt)`; `z` holds one
/// curve per population unit (linearized variables or raw consumption).
pub fn optimal_allocation<C: Borrow<Curve>>(
    strata: &StrataSpec,
    z: &[C],
    n: usize,
    rule: AllocationRule,
) -> Result<Allocation> {
    if z.len() != strata.population() {
        return Err(Error::invalid("one curve per population unit is required"));
    }
    let grid = z[0].borrow().grid().clone();
    let spread = within_strata_spread(strata, z, &grid);
    let shares: Vec<f64> = strata.sizes().iter().zip(&spread).map(|(&s, v)| s as f64 * v).collect();
    if shares.iter().all(|&s| s == 0.0) {
        let mut a = proportional_allocation(strata.sizes(), n)?;
        a.rule = rule;
        a.fell_back = true;
        return Ok(a);
    }
    let (n_h, repaired) = allocate(&shares, strata.sizes(), n)?;
    Ok(Allocation {
        n_h,
        rule,
        total: n,
        repaired,
        fell_back: false,
    })
}

/// `sqrt(int S^2_{z(t),U_h} dt)` per stratum.
pub fn within_strata_spread<C: Borrow<Curve>>(strata: &StrataSpec, z: &[C], grid: &TimeGrid) -> Vec<f64> {
    let d = grid.len();
    strata
        .members()
        .iter()
        .map(|members| {
            let m = members.len();
            if m < 2 {
                return 0.0;
            }
            let mut mean = vec![0.0; d];
            for &k in members {
                for (a, v) in mean.iter_mut().zip(z[k].borrow().values()) {
                    *a += v / m as f64;
                }
            }
            let mut s2 = vec![0.0; d];
            for &k in members {
                for ((a, v), c) in s2.iter_mut().zip(z[k].borrow().values()).zip(&mean) {
                    *a += (v - c) * (v - c);
                }
            }
            s2.iter_mut().for_each(|a| *a /= (m - 1) as f64);
            grid.integrate(&s2).max(0.0).sqrt()
        })
        .collect()
}

/// `H` equal-size strata (sizes differ by at most one) by increasing
/// `summary`; ties are ordered by unit index.
pub fn quartile_strata(summary: &[f64], h: usize) -> Result<StrataSpec> {
    let n = summary.len();
    if h == 0 || n < h {
        return Err(Error::invalid(format!("cannot cut {n} units into {h} strata")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| summary[a].total_cmp(&summary[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    let mut stratum = 0;
    for (rank, &k) in order.iter().enumerate() {
        while rank >= (stratum + 1) * n / h {
            stratum += 1;
        }
        labels[k] = stratum;
    }
    StrataSpec::new(labels)
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub strata: StrataSpec,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared grid-norm distances.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the retained restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

/// k-means partition of the curves into `h` strata.
pub fn kmeans_strata<C: Borrow<Curve> + Sync>(curves: &[C], h: usize, seed: u64) -> Result<StrataSpec> {
    Ok(kmeans(curves, h, seed, KMEANS_RESTARTS)?.strata)
}

/// k-means++ seeding followed by Lloyd iterations, best of `restarts`.
/// Labels are numbered by first appearance in unit order.
pub fn kmeans<C: Borrow<Curve> + Sync>(curves: &[C], h: usize, seed: u64, restarts: usize) -> Result<KmeansFit> {
    if h < 2 {
        return Err(Error::invalid("k-means stratification needs H >= 2"));
    }
    if curves.is_empty() {
        return Err(Error::invalid("no curves to cluster"));
    }
    let grid = curves[0].borrow().grid().clone();
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.borrow().values()).collect();
    let mut distinct: Vec<&[f64]> = rows.clone();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < h {
        return Err(Error::invalid(format!(
            "{} distinct curves cannot form {h} clusters",
            distinct.len()
        )));
    }
    let runs: Vec<Run> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(&rows, &grid, h, &mut derived_rng(seed, r as u64)))
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.objective.total_cmp(&b.objective).then(i.cmp(j)))
        .expect("at least one restart");

    let mut relabel = vec![usize::MAX; h];
    let mut next = 0;
    for &l in &best.labels {
        if relabel[l] == usize::MAX {
            relabel[l] = next;
            next += 1;
        }
    }
    let labels = best.labels.iter().map(|&l| relabel[l]).collect();
    let mut centroids = vec![Vec::new(); h];
    for (old, c) in best.centroids.into_iter().enumerate() {
        centroids[relabel[old]] = c;
    }
    Ok(KmeansFit {
        strata: StrataSpec::new(labels)?,
        centroids,
        objective: best.objective,
        history: best.history,
        restart,
    })
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
    history: Vec<f64>,
}

fn sq_dist(grid: &TimeGrid, a: &[f64], b: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(q, (x, y))| q * (x - y) * (x - y))
        .sum()
}

fn nearest(grid: &TimeGrid, x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(grid, x, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap()
}

fn lloyd<R: Rng>(rows: &[&[f64]], grid: &TimeGrid, h: usize, rng: &mut R) -> Run {
    let n = rows.len();
    let d = grid.len();
    let mut centroids: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|x| sq_dist(grid, x, &centroids[0])).collect();
    while centroids.len() < h {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(rows[pick].to_vec());
        for (v, x) in d2.iter_mut().zip(rows) {
            *v = v.min(sq_dist(grid, x, centroids.last().unwrap()));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut cost = vec![0.0; n];
        for (i, x) in rows.iter().enumerate() {
            let (j, c) = nearest(grid, x, &centroids);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            cost[i] = c;
        }
        // an emptied cluster takes the point farthest from its centroid
        let mut counts = vec![0usize; h];
        labels.iter().for_each(|&l| counts[l] += 1);
        for j in 0..h {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)))
                    .expect("at least H distinct points");
                counts[labels[far]] -= 1;
                labels[far] = j;
                counts[j] = 1;
                cost[far] = 0.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; h];
        for (x, &l) in rows.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for (c, (s, &m)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            *c = s.iter().map(|v| v / m as f64).collect();
        }
        let objective: f64 = rows.iter().zip(&labels).map(|(x, &l)| sq_dist(grid, x, &centroids[l])).sum();
        history.push(objective);
        if !changed {
            break;
        }
    }
    Run {
        objective: *history.last().unwrap(),
        labels,
        centroids,
        history,
    }
}
