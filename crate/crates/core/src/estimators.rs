//! Design-based median estimators.
//!
//! The sample median solves the weighted estimating equation with
//! Horvitz-Thompson weights `1/pi_k`, or with poststratified weights
//! `N_g / (N_hat_g pi_k)` when group counts are known.

use serde::Serialize;

use crate::curves::{Curve, CurvePopulation};
use crate::designs::{SampleDraw, StrataSpec};
use crate::error::{Error, Result};
use crate::median::{l1_median, MedianFit, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HorvitzThompson,
    Poststratified,
}

/// Sampled curves with their estimation weights.
#[derive(Debug, Clone)]
pub struct WeightedSample<'a> {
    units: Vec<usize>,
    curves: Vec<&'a Curve>,
    weights: Vec<f64>,
    pi: Vec<f64>,
    provenance: Provenance,
}

impl<'a> WeightedSample<'a> {
    /// Weights `1/pi_k` over the distinct sampled units.
    pub fn horvitz_thompson(draw: &SampleDraw, pop: &'a CurvePopulation) -> Result<Self> {
        Self::horvitz_thompson_floored(draw, pop, 0.0)
    }

    /// Same, with inclusion probabilities raised to at least `pi_floor`.
    pub fn horvitz_thompson_floored(draw: &SampleDraw, pop: &'a CurvePopulation, pi_floor: f64) -> Result<Self> {
        check_draw(draw, pop)?;
        let pi: Vec<f64> = draw.pi.iter().map(|&p| p.max(pi_floor)).collect();
        Ok(Self {
            units: draw.units.clone(),
            curves: pop.subset(&draw.units),
            weights: pi.iter().map(|p| 1.0 / p).collect(),
            pi,
            provenance: Provenance::HorvitzThompson,
        })
    }

    /// Poststratified weights `N_g / (N_hat_g pi_k)` with
    /// `N_hat_g = sum_{s_g} 1/pi_k`. Every group must be hit by the sample.
    pub fn poststratified(draw: &SampleDraw, pop: &'a CurvePopulation, groups: &StrataSpec) -> Result<Self> {
        check_draw(draw, pop)?;
        if groups.population() != pop.len() {
            return Err(Error::invalid("poststrata must label every population unit"));
        }
        let mut n_hat = vec![0.0; groups.count()];
        for (&k, &p) in draw.units.iter().zip(&draw.pi) {
            n_hat[groups.labels()[k]] += 1.0 / p;
        }
        if let Some(g) = n_hat.iter().position(|&v| v == 0.0) {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        let weights = draw
            .units
            .iter()
            .zip(&draw.pi)
            .map(|(&k, &p)| {
                let g = groups.labels()[k];
                groups.sizes()[g] as f64 / (n_hat[g] * p)
            })
            .collect();
        Ok(Self {
            units: draw.units.clone(),
            curves: pop.subset(&draw.units),
            weights,
            pi: draw.pi.clone(),
            provenance: Provenance::Poststratified,
        })
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn curves(&self) -> &[&'a Curve] {
        &self.curves
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn fit(&self, cfg: &SolverConfig) -> Result<MedianFit> {
        l1_median(&self.curves, &self.weights, cfg)
    }
}

fn check_draw(draw: &SampleDraw, pop: &CurvePopulation) -> Result<()> {
    if draw.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if draw.design.population() != pop.len() {
        return Err(Error::design(format!(
            "design is for N={} but the population has {} units",
            draw.design.population(),
            pop.len()
        )));
    }
    if draw.pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::design("inclusion probabilities must lie in (0, 1]"));
    }
    Ok(())
}

/// Horvitz-Thompson substitution estimator of the population median.
pub fn ht_median(draw: &SampleDraw, pop: &CurvePopulation, cfg: &SolverConfig) -> Result<MedianFit> {
    WeightedSample::horvitz_thompson(draw, pop)?.fit(cfg)
}

/// Poststratified median estimator with known group sizes.
pub fn poststratified_median(
    draw: &SampleDraw,
    pop: &CurvePopulation,
    groups: &StrataSpec,
    cfg: &SolverConfig,
) -> Result<MedianFit> {
    WeightedSample::poststratified(draw, pop, groups)?.fit(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::TimeGrid;
    use crate::designs::{draw_srswor, draw_stratified, Design};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn population(n: usize, d: usize, seed: u64) -> CurvePopulation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Arc::new(TimeGrid::equally_spaced(d, 1.0).unwrap());
        let rows = (0..n)
            .map(|_| {
                let level: f64 = rng.random_range(1.0..5.0);
                (0..d).map(|_| level + rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        CurvePopulation::new(g, rows).unwrap()
    }

    #[test]
    fn census_recovers_population_median() {
        let pop = population(60, 4, 1);
        let cfg = SolverConfig::default();
        let truth = l1_median(pop.curves(), &vec![1.0; 60], &cfg).unwrap();
        let draw = draw_srswor(60, 60, 5).unwrap();
        let est = ht_median(&draw, &pop, &cfg).unwrap();
        assert!(est.median.sup_distance(&truth.median) < 1e-8);

        let strata = StrataSpec::new((0..60).map(|k| k % 3).collect()).unwrap();
        let draw = draw_stratified(&strata, &[20, 20, 20], 5).unwrap();
        let est = ht_median(&draw, &pop, &cfg).unwrap();
        assert!(est.median.sup_distance(&truth.median) < 1e-8);
        let est = poststratified_median(&draw, &pop, &strata, &cfg).unwrap();
        assert!(est.median.sup_distance(&truth.median) < 1e-8);
    }

    #[test]
    fn srswor_equals_unweighted_sample_median() {
        let pop = population(80, 5, 2);
        let draw = draw_srswor(80, 20, 8).unwrap();
        let cfg = SolverConfig::default();
        let ht = ht_median(&draw, &pop, &cfg).unwrap();
        let plain = l1_median(&pop.subset(&draw.units), &[1.0; 20], &cfg).unwrap();
        assert!(ht.median.sup_distance(&plain.median) < 1e-9);
    }

    #[test]
    fn single_group_poststratification_is_ht() {
        let pop = population(50, 3, 3);
        let draw = draw_srswor(50, 12, 4).unwrap();
        let one = StrataSpec::single(50);
        let ws = WeightedSample::poststratified(&draw, &pop, &one).unwrap();
        assert!(ws.weights().iter().all(|&w| (w - 50.0 / 12.0).abs() < 1e-12));
        let cfg = SolverConfig::default();
        let a = ws.fit(&cfg).unwrap();
        let b = ht_median(&draw, &pop, &cfg).unwrap();
        assert!(a.median.sup_distance(&b.median) < 1e-10);
    }

    #[test]
    fn proportional_groups_match_strat_prop_weights() {
        let pop = population(40, 3, 4);
        let groups = StrataSpec::new((0..40).map(|k| usize::from(k >= 10)).collect()).unwrap();
        // a SRSWOR draw that happens to hit 2 of the 10 and 6 of the 30
        let units: Vec<usize> = vec![0, 5, 10, 15, 20, 25, 30, 35];
        let draw = SampleDraw {
            pi: vec![8.0 / 40.0; 8],
            units,
            multiplicities: None,
            draws: None,
            design: Arc::new(Design::srswor(40, 8).unwrap()),
            seed: 0,
        };
        let post = WeightedSample::poststratified(&draw, &pop, &groups).unwrap();
        // STRAT-PROP: n_h = 2, 6 so weights N_h/n_h = 5 everywhere
        assert!(post.weights().iter().all(|&w| (w - 5.0).abs() < 1e-12));
    }

    #[test]
    fn poststrata_weights_calibrate_group_counts() {
        let pop = population(90, 2, 6);
        let groups = StrataSpec::new((0..90).map(|k| k % 4).collect::<Vec<_>>()).unwrap();
        let draw = draw_srswor(90, 30, 6).unwrap();
        let ws = WeightedSample::poststratified(&draw, &pop, &groups).unwrap();
        let mut totals = [0.0; 4];
        for (&k, &w) in ws.units().iter().zip(ws.weights()) {
            totals[groups.labels()[k]] += w;
        }
        for (t, &size) in totals.iter().zip(groups.sizes()) {
            assert!((t - size as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_poststratum_is_an_error() {
        let pop = population(10, 2, 7);
        let groups = StrataSpec::new(vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        let draw = SampleDraw {
            units: vec![0, 1, 2],
            pi: vec![0.3; 3],
            multiplicities: None,
            draws: None,
            design: Arc::new(Design::srswor(10, 3).unwrap()),
            seed: 0,
        };
        match WeightedSample::poststratified(&draw, &pop, &groups) {
            Err(Error::EmptyGroup { group }) => assert_eq!(group, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_weight_invariance() {
        let pop = population(30, 4, 9);
        let w: Vec<f64> = (0..30).map(|k| 1.0 + (k % 5) as f64).collect();
        let cfg = SolverConfig::default();
        let a = l1_median(pop.curves(), &w, &cfg).unwrap();
        let w7: Vec<f64> = w.iter().map(|x| 7.5 * x).collect();
        let b = l1_median(pop.curves(), &w7, &cfg).unwrap();
        assert!(a.median.sup_distance(&b.median) < 1e-9);
    }

    #[test]
    fn pi_floor_caps_weights() {
        let pop = population(20, 2, 10);
        let mut p = vec![0.001; 20];
        p[0] = 1.0 - 0.019;
        let design = Arc::new(Design::ppswr(p, 4).unwrap());
        let draw = design.draw(2).unwrap();
        let ws = WeightedSample::horvitz_thompson_floored(&draw, &pop, 0.05).unwrap();
        assert!(ws.weights().iter().all(|&w| w <= 20.0 + 1e-12));
    }
}
