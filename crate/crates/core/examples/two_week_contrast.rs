//! Adding a second week moves the spatial median's first-week coordinates
//! but leaves the pointwise median unchanged.
//!
//! cargo run --release --example two_week_contrast

use medcurve::simulation::{synth_population, two_week_contrast, SynthConfig};
use medcurve::SolverConfig;

fn main() -> medcurve::Result<()> {
    let synth = synth_population(&SynthConfig {
        units: 1000,
        points_per_day: 24,
        ..SynthConfig::default()
    })?;
    let c = two_week_contrast(&synth.week1, &synth.week2, &SolverConfig::default())?;
    println!("largest week-1 change, pointwise median: {:.3e}", c.pointwise_change);
    println!("largest week-1 change, spatial median:   {:.3e}", c.spatial_change);
    Ok(())
}
