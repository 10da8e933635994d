//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 solver failure, 4 design error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::curves::{Curve, CurvePopulation};
use crate::designs::{AllocSpec, Design, DesignKind, DesignSpec, SampleDraw, StrataSpec};
use crate::error::{Error, Result};
use crate::estimators::WeightedSample;
use crate::io;
use crate::linearization::{estimated_linearized_variables, linearized_variables};
use crate::median::{l1_median, MedianFit, SolverConfig};
use crate::simulation::{monte_carlo_compare, synth_population, CompareDesign, MonteCarloConfig, SynthConfig};
use crate::stratification::{kmeans_strata, optimal_allocation, proportional_allocation, quartile_strata, AllocationRule};
use crate::variance::{poststratified_variance_estimate, variance_estimate, VarianceFunction};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_DESIGN: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "medcurve", version, about = "Median curves of sampled populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// L1-median of every curve in a file.
    Median(MedianArgs),
    /// Draw a sample, estimate the median and its variance function.
    Estimate(EstimateArgs),
    /// Monte Carlo comparison of sampling designs.
    Simulate(SimulateArgs),
    /// Build strata and allocations.
    Stratify(StratifyArgs),
    /// Write a synthetic two-week population.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Relative score tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig::default().with_tol(self.tol).with_max_iter(self.max_iter)
    }
}

#[derive(Debug, Args)]
pub struct MedianArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// CSV `unit_id,weight`; unit weights by default.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Design JSON.
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Synthetic population settings (JSON). Ignored with --week1/--week2.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Auxiliary week curves.
    #[arg(long, requires = "week2")]
    pub week1: Option<PathBuf>,
    /// Study week curves.
    #[arg(long, requires = "week1")]
    pub week2: Option<PathBuf>,
    /// Monte Carlo settings (JSON): n, strata, designs, variance, pi_floor.
    #[arg(long)]
    pub designs: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "MEDCURVE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StratifyOn {
    /// k-means on the linearized variables about the population median.
    Linearized,
    /// k-means on the curves themselves.
    Raw,
    /// Equal-size strata of the maximum reading.
    ScalarMax,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = StratifyOn::Linearized)]
    pub on: StratifyOn,
    #[arg(long = "H", default_value_t = 4)]
    pub h: usize,
    /// Sample size to allocate.
    #[arg(long)]
    pub n: usize,
    /// Allocation written to strata-allocation fields: prop or optim.
    #[arg(long, default_value = "prop")]
    pub alloc: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "MEDCURVE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged(_) | Error::SingularGamma { .. } => EXIT_SOLVER,
        Error::Design(_) | Error::EmptyGroup { .. } | Error::Variance(_) => EXIT_DESIGN,
        _ => EXIT_INPUT,
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Median(a) => cmd_median(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => with_threads(a.threads, || cmd_simulate(a)),
        Command::Stratify(a) => with_threads(a.threads, || cmd_stratify(a)),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match threads {
        Some(0) => Err(Error::invalid("--threads must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(f),
        None => f(),
    }
}

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::invalid(format!("`{command}` is stochastic and needs --seed")))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Serialize)]
struct MedianDiagnostics<'a> {
    units: usize,
    grid_len: usize,
    #[serde(flatten)]
    fit: &'a MedianFit,
}

fn cmd_median(a: &MedianArgs) -> Result<()> {
    let pop = io::read_population(&a.input)?;
    let weights = match &a.weights {
        Some(p) => io::parse_weights(std::fs::File::open(p)?, &pop)?,
        None => vec![1.0; pop.len()],
    };
    let fit = match l1_median(pop.curves(), &weights, &a.solver.config()) {
        Ok(f) => f,
        Err(Error::NotConverged(fit)) => {
            write(&a.out, "diagnostics.json", &json(&MedianDiagnostics {
                units: pop.len(),
                grid_len: pop.grid().len(),
                fit: &fit,
            })?)?;
            return Err(Error::NotConverged(fit));
        }
        Err(e) => return Err(e),
    };
    write(&a.out, "median.csv", &io::curve_csv(&fit.median))?;
    write(&a.out, "diagnostics.json", &json(&MedianDiagnostics {
        units: pop.len(),
        grid_len: pop.grid().len(),
        fit: &fit,
    })?)
}

/// A design read from JSON and resolved against a population.
#[derive(Debug, Clone)]
pub struct ResolvedDesign {
    pub design: Arc<Design>,
    /// Poststratification groups.
    pub groups: Option<StrataSpec>,
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds the design described by `spec`; relative paths are taken from
/// `base`.
pub fn resolve_design(spec: &DesignSpec, base: &Path, pop: &CurvePopulation) -> Result<ResolvedDesign> {
    let aux = match &spec.auxiliary {
        Some(p) => {
            let aux = io::read_population(resolve_path(base, p))?;
            if aux.ids() != pop.ids() {
                return Err(Error::design("auxiliary file must list the same units in the same order"));
            }
            aux
        }
        None => pop.clone(),
    };
    let strata = |what: &str| -> Result<StrataSpec> {
        let p = spec
            .strata
            .as_ref()
            .ok_or_else(|| Error::design(format!("{what} design needs a `strata` file")))?;
        io::read_strata(resolve_path(base, p), pop)
    };
    let big_n = pop.len();
    let (design, groups) = match spec.kind {
        DesignKind::Srswor => (Design::srswor(big_n, spec.n)?, None),
        DesignKind::Systematic => {
            let key = match spec.order_key_column.as_deref().unwrap_or("mean") {
                "mean" => aux.unit_means(),
                "max" => aux.unit_maxima(),
                "id" => (0..big_n).map(|k| k as f64).collect(),
                other => return Err(Error::design(format!("unknown order key `{other}`"))),
            };
            (Design::systematic(key, spec.n)?, None)
        }
        DesignKind::Stratified => {
            let s = strata("stratified")?;
            let alloc = match spec.alloc.as_ref().unwrap_or(&AllocSpec::Rule("prop".into())) {
                AllocSpec::Explicit(v) => {
                    if v.iter().sum::<usize>() != spec.n {
                        return Err(Error::design("explicit allocation does not sum to n"));
                    }
                    v.clone()
                }
                AllocSpec::Rule(r) if r == "prop" => proportional_allocation(s.sizes(), spec.n)?.n_h,
                AllocSpec::Rule(r) if r == "optim" => {
                    optimal_allocation(&s, aux.curves(), spec.n, AllocationRule::XOptim)?.n_h
                }
                AllocSpec::Rule(r) => return Err(Error::design(format!("unknown allocation `{r}`"))),
            };
            (Design::stratified(s, alloc)?, None)
        }
        DesignKind::Ppswr => {
            match spec.p_source.as_deref().unwrap_or("mean") {
                "mean" => {}
                other => return Err(Error::design(format!("unknown size measure `{other}`"))),
            }
            (Design::ppswr(crate::designs::pps_weights_from_curves(&aux)?, spec.n)?, None)
        }
        DesignKind::Poststratified => (Design::srswor(big_n, spec.n)?, Some(strata("poststratified")?)),
    };
    Ok(ResolvedDesign {
        design: Arc::new(design),
        groups,
    })
}

/// Draw, estimated median and, when the design supports it, the variance
/// estimate. Variance failures are kept, not raised.
pub struct EstimateOutput {
    pub draw: SampleDraw,
    pub weights: Vec<f64>,
    pub fit: MedianFit,
    pub variance: std::result::Result<VarianceFunction, String>,
}

pub fn estimate_pipeline(
    pop: &CurvePopulation,
    resolved: &ResolvedDesign,
    seed: u64,
    solver: &SolverConfig,
) -> Result<EstimateOutput> {
    let draw = resolved.design.draw(seed)?;
    let ws = match &resolved.groups {
        Some(g) => WeightedSample::poststratified(&draw, pop, g)?,
        None => WeightedSample::horvitz_thompson(&draw, pop)?,
    };
    let fit = ws.fit(solver)?;
    let variance = estimated_linearized_variables(&ws, &fit.median)
        .and_then(|u| match &resolved.groups {
            Some(g) => poststratified_variance_estimate(&draw, &u, g),
            None => variance_estimate(&draw, &u),
        })
        .map_err(|e| e.to_string());
    Ok(EstimateOutput {
        weights: ws.weights().to_vec(),
        draw,
        fit,
        variance,
    })
}

#[derive(Debug, Serialize)]
struct EstimateDiagnostics<'a> {
    design: &'a str,
    seed: u64,
    population: usize,
    sample_size: usize,
    fit: &'a MedianFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_clamped: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_error: Option<&'a str>,
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let seed = require_seed(a.seed, "estimate")?;
    let pop = io::read_population(&a.input)?;
    let spec = io::read_design_spec(&a.design)?;
    if spec.seed.is_some_and(|s| s != seed) {
        return Err(Error::invalid("design file seed differs from --seed"));
    }
    let base = a.design.parent().unwrap_or(Path::new("."));
    let resolved = resolve_design(&spec, base, &pop)?;
    let out = estimate_pipeline(&pop, &resolved, seed, &a.solver.config())?;

    write(&a.out, "sample.csv", &io::sample_csv(&out.draw, &out.weights, &pop))?;
    write(&a.out, "median.csv", &io::curve_csv(&out.fit.median))?;
    if let Ok(v) = &out.variance {
        write(&a.out, "variance.csv", &io::variance_csv(v))?;
    }
    let name = match spec.kind {
        DesignKind::Poststratified => "poststratified",
        _ => resolved.design.name(),
    };
    write(&a.out, "diagnostics.json", &json(&EstimateDiagnostics {
        design: name,
        seed,
        population: pop.len(),
        sample_size: out.draw.len(),
        fit: &out.fit,
        variance_clamped: out.variance.as_ref().ok().map(|v| v.clamped),
        variance_error: out.variance.as_ref().err().map(String::as_str),
    })?)
}

/// Monte Carlo settings file; every field is optional.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignsFile {
    n: Option<usize>,
    reps: Option<usize>,
    strata: Option<usize>,
    designs: Option<Vec<CompareDesign>>,
    variance: Option<bool>,
    pi_floor: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

/// Monte Carlo settings from the optional designs file and flags.
pub fn simulate_config(
    designs: Option<&Path>,
    reps: Option<usize>,
    n: Option<usize>,
    seed: u64,
) -> Result<MonteCarloConfig> {
    let file: DesignsFile = match designs {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => DesignsFile::default(),
    };
    let d = MonteCarloConfig::default();
    Ok(MonteCarloConfig {
        n: n.or(file.n).unwrap_or(d.n),
        reps: reps.or(file.reps).unwrap_or(d.reps),
        seed,
        strata: file.strata.unwrap_or(d.strata),
        designs: file.designs.unwrap_or(d.designs),
        variance: file.variance.unwrap_or(d.variance),
        pi_floor: file.pi_floor.unwrap_or(d.pi_floor),
        tol: file.tol.unwrap_or(d.tol),
        max_iter: file.max_iter.unwrap_or(d.max_iter),
    })
}

/// Synthetic settings from an optional JSON file; the seed always comes
/// from the command line.
pub fn synth_config(path: Option<&Path>, seed: u64) -> Result<SynthConfig> {
    let mut cfg: SynthConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let seed = require_seed(a.seed, "simulate")?;
    let cfg = simulate_config(a.designs.as_deref(), a.reps, a.n, seed)?;
    let (week1, week2) = match (&a.week1, &a.week2) {
        (Some(w1), Some(w2)) => {
            let w1 = io::read_population(w1)?;
            let w2 = io::read_population(w2)?;
            if w1.ids() != w2.ids() {
                return Err(Error::invalid("both weeks must list the same units in the same order"));
            }
            (w1, w2)
        }
        _ => {
            let p = synth_population(&synth_config(a.synth.as_deref(), seed)?)?;
            (p.week1, p.week2)
        }
    };
    let report = monte_carlo_compare(&week1, &week2, &cfg)?;
    write(&a.out, "report.json", &json(&report)?)?;
    write(&a.out, "losses.csv", &report.losses_csv())?;
    for d in &report.designs {
        if let Some(v) = &d.true_variance {
            let c = Curve::new(v.clone(), week2.grid().clone())?;
            write(&a.out, &format!("variance_{}.csv", d.design.name()), &io::curve_csv(&c))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct StratifyReport {
    pub on: &'static str,
    pub strata_sizes: Vec<usize>,
    pub n: usize,
    pub prop: Vec<usize>,
    pub optim: Vec<usize>,
    pub optim_rule: AllocationRule,
    /// The allocation picked with --alloc.
    pub selected: Vec<usize>,
    pub repaired: bool,
    pub fell_back: bool,
}

/// Strata of `pop` and their allocations for a sample of `n`.
pub fn stratify(pop: &CurvePopulation, on: StratifyOn, h: usize, n: usize, seed: Option<u64>) -> Result<(StrataSpec, StratifyReport)> {
    let (strata, z, rule, label) = match on {
        StratifyOn::Linearized => {
            let seed = require_seed(seed, "stratify --on linearized")?;
            let m = l1_median(pop.curves(), &vec![1.0; pop.len()], &SolverConfig::default().with_tol(1e-10))?;
            let u = linearized_variables(pop, &m.median)?;
            let s = kmeans_strata(&u.values, h, seed)?;
            (s, u.values, AllocationRule::UOptim, "linearized")
        }
        StratifyOn::Raw => {
            let seed = require_seed(seed, "stratify --on raw")?;
            let s = kmeans_strata(pop.curves(), h, seed)?;
            (s, pop.curves().to_vec(), AllocationRule::XOptim, "raw")
        }
        StratifyOn::ScalarMax => {
            let s = quartile_strata(&pop.unit_maxima(), h)?;
            (s, pop.curves().to_vec(), AllocationRule::XOptim, "scalar-max")
        }
    };
    let prop = proportional_allocation(strata.sizes(), n)?;
    let optim = optimal_allocation(&strata, &z, n, rule)?;
    let report = StratifyReport {
        on: label,
        strata_sizes: strata.sizes().to_vec(),
        n,
        selected: prop.n_h.clone(),
        repaired: prop.repaired || optim.repaired,
        fell_back: optim.fell_back,
        prop: prop.n_h,
        optim: optim.n_h,
        optim_rule: rule,
    };
    Ok((strata, report))
}

fn cmd_stratify(a: &StratifyArgs) -> Result<()> {
    let pop = io::read_population(&a.input)?;
    let (strata, mut report) = stratify(&pop, a.on, a.h, a.n, a.seed)?;
    report.selected = match a.alloc.as_str() {
        "prop" => report.prop.clone(),
        "optim" => report.optim.clone(),
        other => return Err(Error::invalid(format!("--alloc must be prop or optim, got `{other}`"))),
    };
    write(&a.out, "strata.csv", &io::strata_csv(&strata, &pop))?;
    write(&a.out, "allocations.json", &json(&report)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = require_seed(a.seed, "synth")?;
    let pop = synth_population(&synth_config(a.config.as_deref(), seed)?)?;
    write(&a.out, "week1.csv", &io::population_csv(&pop.week1))?;
    write(&a.out, "week2.csv", &io::population_csv(&pop.week2))
}
