//! Spatial median of a small synthetic population next to the pointwise
//! median and the mean curve.
//!
//! cargo run --release --example median_basics

use medcurve::curves::{mean_curve, pointwise_median};
use medcurve::simulation::{synth_population, SynthConfig};
use medcurve::{l1_median, SolverConfig};

fn main() -> medcurve::Result<()> {
    let pop = synth_population(&SynthConfig {
        units: 500,
        points_per_day: 12,
        ..SynthConfig::default()
    })?
    .week2;
    let w = vec![1.0; pop.len()];

    let fit = l1_median(pop.curves(), &w, &SolverConfig::default())?;
    let weiszfeld = l1_median(pop.curves(), &w, &SolverConfig::default().weiszfeld_only())?;
    let pointwise = pointwise_median(&pop, None)?;
    let mean = mean_curve(&pop);

    println!(
        "safeguarded Newton: {} iterations, residual {:.2e}, objective {:.6}",
        fit.iterations, fit.relative_residual, fit.objective
    );
    println!(
        "Weiszfeld only:     {} iterations, residual {:.2e}, objective {:.6}",
        weiszfeld.iterations, weiszfeld.relative_residual, weiszfeld.objective
    );
    println!();
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "spatial", "pointwise", "mean");
    for (d, t) in pop.grid().points().iter().enumerate() {
        println!(
            "{t:>6.3} {:>10.4} {:>10.4} {:>10.4}",
            fit.median.values()[d],
            pointwise.values()[d],
            mean.values()[d]
        );
    }
    Ok(())
}
