//! Compare sampling designs for the median load curve on a synthetic
//! two-week population.
//!
//! cargo run --release --example design_comparison -- [reps] [seed]

use medcurve::simulation::{monte_carlo_compare, synth_population, MonteCarloConfig, SynthConfig};

fn main() -> medcurve::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(2024);

    let pop = synth_population(&SynthConfig::default())?;
    let cfg = MonteCarloConfig {
        reps,
        seed,
        ..MonteCarloConfig::default()
    };
    let report = monte_carlo_compare(&pop.week1, &pop.week2, &cfg)?;

    println!("N = {}, D = {}, n = {}, {} replicates", report.population, report.grid_len, cfg.n, reps);
    println!("u-strata sizes {:?}", report.u_strata_sizes);
    println!();
    println!("{:<14} {:>10} {:>10} {:>10} {:>10} {:>12} {:>6}", "design", "mean R", "q1", "median", "q3", "mean R(var)", "fail");
    for d in &report.designs {
        let Some(m) = &d.median_loss else {
            println!("{:<14} all replicates failed", d.design.name());
            continue;
        };
        let v = d.variance_loss.as_ref().map(|v| format!("{:.4e}", v.mean)).unwrap_or_default();
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12} {:>6}",
            d.design.name(),
            m.mean,
            m.q1,
            m.median,
            m.q3,
            v,
            d.failures
        );
    }
    Ok(())
}
