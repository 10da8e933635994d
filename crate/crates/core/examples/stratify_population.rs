//! Build strata from week-1 curves and compare allocations.
//!
//! cargo run --release --example stratify_population -- [H] [n] [seed]

use medcurve::linearization::linearized_variables;
use medcurve::simulation::{synth_population, SynthConfig};
use medcurve::stratification::{
    kmeans, optimal_allocation, proportional_allocation, quartile_strata, AllocationRule, KMEANS_RESTARTS,
};
use medcurve::{l1_median, SolverConfig};

fn main() -> medcurve::Result<()> {
    let mut args = std::env::args().skip(1);
    let h: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);

    let synth = synth_population(&SynthConfig::default())?;
    let week1 = &synth.week1;
    let m = l1_median(week1.curves(), &vec![1.0; week1.len()], &SolverConfig::default())?.median;
    let u = linearized_variables(week1, &m)?;

    for (label, curves, rule) in [
        ("u", &u.values[..], AllocationRule::UOptim),
        ("x", week1.curves(), AllocationRule::XOptim),
    ] {
        let fit = kmeans(curves, h, seed, KMEANS_RESTARTS)?;
        let prop = proportional_allocation(fit.strata.sizes(), n)?;
        let optim = optimal_allocation(&fit.strata, curves, n, rule)?;
        println!("k-means on {label}: objective {:.4e} after {} Lloyd steps", fit.objective, fit.history.len());
        println!("  sizes {:?}", fit.strata.sizes());
        println!("  PROP  {:?}", prop.n_h);
        println!("  {:<5} {:?}{}", rule.label(), optim.n_h, if optim.fell_back { " (fell back to PROP)" } else { "" });
    }

    let by_max = quartile_strata(&week1.unit_maxima(), h)?;
    println!("quantile strata on the daily maximum: sizes {:?}", by_max.sizes());
    Ok(())
}
