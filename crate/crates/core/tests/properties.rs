use std::sync::Arc;

use medcurve::curves::{Curve, CurvePopulation, TimeGrid};
use medcurve::designs::{Design, StrataSpec};
use medcurve::linearization::linearized_variables;
use medcurve::median::{l1_median, SolverConfig};
use medcurve::simulation::{loss_r_median, loss_r_median_quadrature};
use medcurve::stratification::{optimal_allocation, proportional_allocation, quartile_strata, AllocationRule};
use medcurve::variance::{poststratified_variance_function, variance_function, variance_function_generic};
use proptest::prelude::*;

fn grid(d: usize) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::equally_spaced(d, 1.0).unwrap())
}

fn population(rows: Vec<Vec<f64>>) -> CurvePopulation {
    let d = rows[0].len();
    CurvePopulation::new(grid(d), rows).unwrap()
}

fn rows(n: impl Into<proptest::sample::SizeRange>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n)
}

fn median_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let pop = population(rows.to_vec());
    let w = vec![1.0; pop.len()];
    l1_median(pop.curves(), &w, &SolverConfig::default()).unwrap().median.into_values()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn median_translation_equivariant(r in rows(5..30, 4), shift in prop::collection::vec(-50.0..50.0f64, 4)) {
        let m = median_of(&r);
        let moved: Vec<Vec<f64>> = r.iter().map(|y| y.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let expected: Vec<f64> = m.iter().zip(&shift).map(|(a, b)| a + b).collect();
        prop_assert!(close(&median_of(&moved), &expected, 1e-6));
    }

    #[test]
    fn median_scale_equivariant(r in rows(5..30, 3), c in prop_oneof![0.01..100.0f64, -100.0..-0.01f64]) {
        let m = median_of(&r);
        let scaled: Vec<Vec<f64>> = r.iter().map(|y| y.iter().map(|v| c * v).collect()).collect();
        let expected: Vec<f64> = m.iter().map(|v| c * v).collect();
        prop_assert!(close(&median_of(&scaled), &expected, 1e-6 * c.abs().max(1.0)));
    }

    #[test]
    fn median_orthogonal_equivariant(r in rows(5..30, 4), v in prop::collection::vec(-1.0..1.0f64, 4)) {
        let vv: f64 = v.iter().map(|x| x * x).sum();
        prop_assume!(vv > 1e-3);
        // Householder reflection; orthogonal in the uniform quadrature norm.
        let reflect = |y: &[f64]| -> Vec<f64> {
            let dot: f64 = y.iter().zip(&v).map(|(a, b)| a * b).sum();
            y.iter().zip(&v).map(|(a, b)| a - 2.0 * dot / vv * b).collect()
        };
        let m = median_of(&r);
        let moved: Vec<Vec<f64>> = r.iter().map(|y| reflect(y)).collect();
        prop_assert!(close(&median_of(&moved), &reflect(&m), 1e-6));
    }

    #[test]
    fn allocations_sum_and_respect_bounds(
        sizes in prop::collection::vec(1usize..400, 1..8),
        frac in 0.0..1.0f64,
    ) {
        let total: usize = sizes.iter().sum();
        let n = (sizes.len() + (frac * (total - sizes.len()) as f64) as usize).min(total);
        let a = proportional_allocation(&sizes, n).unwrap();
        prop_assert_eq!(a.n_h.iter().sum::<usize>(), n);
        for (nh, big) in a.n_h.iter().zip(&sizes) {
            prop_assert!(*nh >= 1 && nh <= big);
        }
    }

    #[test]
    fn optimal_allocation_sums_and_bounds(
        r in rows(20..80, 3),
        h in 2usize..5,
        frac in 0.0..1.0f64,
    ) {
        let pop = population(r);
        let labels: Vec<usize> = (0..pop.len()).map(|k| k % h).collect();
        let strata = StrataSpec::new(labels).unwrap();
        let n = h + (frac * (pop.len() - h) as f64) as usize;
        let a = optimal_allocation(&strata, pop.curves(), n, AllocationRule::XOptim).unwrap();
        prop_assert_eq!(a.n_h.iter().sum::<usize>(), n);
        for (nh, big) in a.n_h.iter().zip(strata.sizes()) {
            prop_assert!(*nh >= 1 && nh <= big);
        }
    }

    #[test]
    fn losses_are_metrics(a in rows(3..4, 6)) {
        let g = grid(6);
        let c: Vec<Curve> = a.into_iter().map(|v| Curve::new(v, g.clone()).unwrap()).collect();
        for loss in [loss_r_median, loss_r_median_quadrature] {
            prop_assert_eq!(loss(&c[0], &c[0]).unwrap(), 0.0);
            prop_assert!(loss(&c[0], &c[1]).unwrap() >= 0.0);
            prop_assert!((loss(&c[0], &c[1]).unwrap() - loss(&c[1], &c[0]).unwrap()).abs() < 1e-12);
            let direct = loss(&c[0], &c[2]).unwrap();
            let via = loss(&c[0], &c[1]).unwrap() + loss(&c[1], &c[2]).unwrap();
            prop_assert!(direct <= via + 1e-12);
        }
    }

    #[test]
    fn quartile_strata_sizes_differ_by_at_most_one(summary in prop::collection::vec(-5.0..5.0f64, 4..300)) {
        let s = quartile_strata(&summary, 4).unwrap();
        let sizes = s.sizes();
        prop_assert_eq!(sizes.len(), 4);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let max_of = |h: usize| (0..summary.len()).filter(|&k| s.labels()[k] == h).map(|k| summary[k]).fold(f64::MIN, f64::max);
        let min_of = |h: usize| (0..summary.len()).filter(|&k| s.labels()[k] == h).map(|k| summary[k]).fold(f64::MAX, f64::min);
        for h in 0..3 {
            prop_assert!(max_of(h) <= min_of(h + 1));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn closed_forms_match_double_sums(r in rows(12..40, 3), frac in 0.1..0.9f64, h in 2usize..4) {
        let pop = population(r);
        let n_units = pop.len();
        let w = vec![1.0; n_units];
        let m = l1_median(pop.curves(), &w, &SolverConfig::default()).unwrap().median;
        let u = linearized_variables(&pop, &m).unwrap();
        let n = ((frac * n_units as f64) as usize).max(h);
        let strata = StrataSpec::new((0..n_units).map(|k| k % h).collect()).unwrap();
        let alloc = proportional_allocation(strata.sizes(), n).unwrap().n_h;
        for design in [Design::srswor(n_units, n).unwrap(), Design::stratified(strata, alloc).unwrap()] {
            let a = variance_function(&u, &design).unwrap();
            let b = variance_function_generic(&u, &design).unwrap();
            let scale = a.values.iter().fold(1e-12f64, |s, v| s.max(v.abs()));
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= 1e-9 * scale));
        }
    }

    #[test]
    fn poststratification_tracks_proportional_strata(
        sizes in prop::collection::vec(150usize..400, 3),
        seed_rows in rows(3..4, 4),
    ) {
        // Groups with distinct centres so that within-group spread is small.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            for i in 0..s {
                let wobble = ((i * 7919) % 101) as f64 / 100.0 - 0.5;
                rows.push(seed_rows[g].iter().enumerate().map(|(j, c)| 10.0 * g as f64 + c + wobble * (1.0 + j as f64)).collect());
                labels.push(g);
            }
        }
        let pop = population(rows);
        let w = vec![1.0; pop.len()];
        let m = l1_median(pop.curves(), &w, &SolverConfig::default()).unwrap().median;
        let u = linearized_variables(&pop, &m).unwrap();
        let groups = StrataSpec::new(labels).unwrap();
        let n = 200;
        let post = poststratified_variance_function(&u, &groups, n).unwrap();
        let alloc = proportional_allocation(groups.sizes(), n).unwrap().n_h;
        let strat = variance_function(&u, &Design::stratified(groups, alloc).unwrap()).unwrap();
        let (a, b) = (post.integral(), strat.integral());
        prop_assert!((a - b).abs() <= 0.1 * b, "post {a} strat {b}");
    }
}
