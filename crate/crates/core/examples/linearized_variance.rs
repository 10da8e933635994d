//! Asymptotic variance function of the SRSWOR median estimator from the
//! linearized variables, checked against repeated draws.
//!
//! cargo run --release --example linearized_variance -- [reps] [seed]

use medcurve::designs::Design;
use medcurve::estimators::ht_median;
use medcurve::linearization::linearized_variables;
use medcurve::simulation::{synth_population, SynthConfig};
use medcurve::variance::variance_function;
use medcurve::{l1_median, SolverConfig};
use std::sync::Arc;

fn main() -> medcurve::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let pop = synth_population(&SynthConfig {
        units: 1000,
        points_per_day: 12,
        ..SynthConfig::default()
    })?
    .week2;
    let solver = SolverConfig::default();
    let m = l1_median(pop.curves(), &vec![1.0; pop.len()], &solver)?.median;
    let u = linearized_variables(&pop, &m)?;
    println!("Gamma condition {:.3e}, ridge {:?}", u.condition, u.ridge);

    let design = Arc::new(Design::srswor(pop.len(), 100)?);
    let asymptotic = variance_function(&u, &design)?;

    let d = pop.grid().len();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for r in 0..reps {
        let draw = design.draw(medcurve::rng::derived_seed(seed, r as u64))?;
        let est = ht_median(&draw, &pop, &solver)?.median;
        for (j, v) in est.values().iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    println!("{:>6} {:>12} {:>12}", "t", "linearized", "empirical");
    for j in 0..d {
        let mean = sum[j] / reps as f64;
        let emp = sq[j] / reps as f64 - mean * mean;
        println!("{:>6.3} {:>12.4e} {:>12.4e}", pop.grid().points()[j], asymptotic.values[j], emp);
    }
    Ok(())
}
