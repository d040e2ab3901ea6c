//! Multiple functional linear regression with simultaneous variable selection.
//!
//! Each functional predictor is reduced to its leading functional principal
//! component scores; the stacked score design is fitted by group-SCAD
//! penalized least squares using iterated local quadratic approximation.
//! Truncation level and penalty are chosen jointly by generalized
//! cross-validation, and pointwise confidence bands for the coefficient
//! curves come from a sandwich covariance estimate.
//!
//! ```no_run
//! use funcreg::{simgen, solver, tuning, Design, FitConfig, SimConfig};
//!
//! let config = SimConfig::default();
//! let rep = simgen::generate_replicate(&config, 7).unwrap();
//! let design = Design::from_curves(&rep.curves, 4).unwrap();
//! let fit = solver::fit(&design, &rep.response, &FitConfig::new(4, 0.05).unwrap()).unwrap();
//! println!("active predictors: {:?}", fit.active_set);
//! # let _ = tuning::TuningGrid::default();
//! ```

pub mod error;
pub mod fpca;
pub mod funcdata;
pub mod inference;
pub mod scad;
pub mod simgen;
pub mod solver;
pub mod tuning;

mod linalg;

pub use error::{Error, Result};
pub use fpca::{Design, EigenSystem, LambdaMatrix, PredictorBasis, ScoreMatrix};
pub use funcdata::{CurveSet, Grid, ResponseVector};
pub use inference::{CoefCovariance, ConfidenceBand};
pub use scad::ScadParams;
pub use simgen::{NoiseReading, SimConfig, SimMetrics};
pub use solver::{FitConfig, FitResult};
pub use tuning::{TuningGrid, TuningTable};
