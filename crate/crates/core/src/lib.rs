//! Empirical distributional distance between stationary ergodic processes,
//! and the tests built on it: goodness of fit against a known law,
//! three-sample classification, and single change-point estimation.
//!
//! All quantities are computed at a finite truncation
//! ([`WeightScheme`]); every distance carries a bound on the weight the
//! truncation left out.

#![forbid(unsafe_code)]

pub mod changepoint;
pub mod classify;
pub mod cylinder;
pub mod distance;
pub mod error;
pub mod gof;
pub mod harness;
pub mod models;
pub mod sample;
pub mod seeds;

pub use changepoint::{
    estimate_changepoint, estimate_changepoint_with, incremental_scan, scan_range, Boundary, ChangePointEstimate,
    IncrementalScan, ScanPoint,
};
pub use classify::{classify, ClassificationOutcome};
pub use cylinder::{cell_of, freq_table, nu, CellIndex, Cylinder, FreqTable, Interval, PartitionLevel};
pub use distance::{
    compare_certified, dhat, dhat_model, level_tv, level_tv_vs_model, model_distance, CertifiedOrder, DistanceValue,
    PreparedModel, WeightScheme,
};
pub use error::{Error, Result};
pub use gof::{calibrate_gamma, gof_test, Calibration, Decision, GofConfig, GofOutcome};
pub use harness::{run_experiment, ExperimentResult, ExperimentSpec, Summary, TestKind, TrialRecord};
pub use models::{ModelSpec, OracleKind, ProcessModel};
pub use sample::Sample;
