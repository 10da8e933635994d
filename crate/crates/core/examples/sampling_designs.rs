//! One sample under each design, the weighted median estimate and its
//! estimated variance.
//!
//! cargo run --release --example sampling_designs -- [seed]

use std::sync::Arc;

use medcurve::designs::{pps_weights_from_curves, Design};
use medcurve::estimators::WeightedSample;
use medcurve::linearization::{estimated_linearized_variables, linearized_variables};
use medcurve::simulation::{loss_r_median, synth_population, SynthConfig};
use medcurve::stratification::{kmeans_strata, proportional_allocation};
use medcurve::variance::{poststratified_variance_estimate, variance_estimate};
use medcurve::{l1_median, SolverConfig};

fn main() -> medcurve::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(11);
    let synth = synth_population(&SynthConfig {
        units: 1500,
        points_per_day: 16,
        ..SynthConfig::default()
    })?;
    let (aux, pop) = (&synth.week1, &synth.week2);
    let solver = SolverConfig::default();
    let truth = l1_median(pop.curves(), &vec![1.0; pop.len()], &solver)?.median;
    let n = 150;

    let m1 = l1_median(aux.curves(), &vec![1.0; aux.len()], &solver)?.median;
    let strata = kmeans_strata(&linearized_variables(aux, &m1)?.values, 4, seed)?;
    let alloc = proportional_allocation(strata.sizes(), n)?.n_h;
    let designs = [
        ("srswor", Design::srswor(pop.len(), n)?),
        ("systematic", Design::systematic(aux.unit_means(), n)?),
        ("stratified", Design::stratified(strata.clone(), alloc)?),
        ("ppswr", Design::ppswr(pps_weights_from_curves(aux)?, n)?),
        ("poststratified", Design::srswor(pop.len(), n)?),
    ];

    println!("{:<15} {:>6} {:>10} {:>14}", "design", "units", "loss", "int var_hat");
    for (name, design) in designs {
        let draw = Arc::new(design).draw(seed)?;
        let ws = if name == "poststratified" {
            WeightedSample::poststratified(&draw, pop, &strata)?
        } else {
            WeightedSample::horvitz_thompson(&draw, pop)?
        };
        let fit = ws.fit(&solver)?;
        let u_hat = estimated_linearized_variables(&ws, &fit.median)?;
        let var = match name {
            "poststratified" => poststratified_variance_estimate(&draw, &u_hat, &strata).map(|v| v.integral()),
            _ => variance_estimate(&draw, &u_hat).map(|v| v.integral()),
        };
        let var = var.map(|v| format!("{v:.4e}")).unwrap_or_else(|e| format!("n/a ({e})"));
        println!("{name:<15} {:>6} {:>10.4} {var:>14}", draw.len(), loss_r_median(&fit.median, &truth)?);
    }
    Ok(())
}
