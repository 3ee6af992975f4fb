//! Post-processing of regression scores under threshold-level demographic
//! parity constraints.
//!
//! A base regressor's scores are mapped onto a regular output grid by a
//! group-wise penalized rounding rule whose Lagrange multipliers are fitted on
//! an unlabeled calibration sample. Three constraint families are supported:
//!
//! * prescribed CDF levels at prescribed thresholds ([`FairnessSpec::Lz`]),
//! * group CDFs equal to the pooled CDF at thresholds ([`FairnessSpec::Zdp`]),
//! * prescribed levels at two borders with pooled parity in between
//!   ([`FairnessSpec::Border`]).

pub mod baselearner;
pub mod calibration;
pub mod data;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod metrics;
pub mod rng;
pub mod spec;

pub use calibration::{
    solve_dual, CalibrationSet, DitherConfig, FairPredictor, SolveOutcome, SolverOptions,
};
pub use error::{Error, Result};
pub use grid::Grid;
pub use spec::{DualParams, FairnessSpec, GroupId};
