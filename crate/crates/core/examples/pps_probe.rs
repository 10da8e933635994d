//! PPS with replacement against SRSWOR when the size measure is the week-1
//! mean consumption.
//!
//! cargo run --release --example pps_probe -- [reps] [seed]

use medcurve::simulation::{monte_carlo_compare, synth_population, CompareDesign, MonteCarloConfig, SynthConfig};

fn main() -> medcurve::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);

    let synth = synth_population(&SynthConfig::default())?;
    let cfg = MonteCarloConfig {
        reps,
        seed,
        designs: vec![CompareDesign::Srswor, CompareDesign::Pps],
        ..MonteCarloConfig::default()
    };
    let report = monte_carlo_compare(&synth.week1, &synth.week2, &cfg)?;
    for d in &report.designs {
        let m = d.median_loss.as_ref().map(|m| m.mean).unwrap_or(f64::NAN);
        let distinct = d.replicates.iter().map(|r| r.distinct_units as f64).sum::<f64>() / d.replicates.len() as f64;
        println!(
            "{:<8} mean loss {m:.4}  int V {:.4e}  distinct units {distinct:.1}",
            d.design.name(),
            d.true_variance_integral.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
