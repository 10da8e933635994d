//! Design-based estimation of the L1-median of a population of curves.
//!
//! Curves are discretized on a shared [`TimeGrid`](curves::TimeGrid) whose
//! quadrature weights define the inner product. The crate covers the median
//! solver, the linearized variables of the median, sampling designs and
//! their Horvitz-Thompson estimators, variance functions, stratification
//! and a Monte Carlo harness for comparing designs.

pub mod cli;
pub mod curves;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linearization;
pub mod median;
pub mod rng;
pub mod simulation;
pub mod stratification;
pub mod variance;

pub use curves::{Curve, CurvePopulation, TimeGrid};
pub use designs::{Design, SampleDraw, StrataSpec};
pub use error::{Error, Result};
pub use median::{l1_median, MedianFit, SolverConfig};
