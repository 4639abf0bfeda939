//! Experiment driver: configuration, the epsilon sweep, the two-scale pairing
//! test, manufactured solutions and report output.

pub mod config;
pub mod manufactured;
pub mod report;
pub mod study;
pub mod twoscale;

pub use config::ExperimentConfig;
pub use report::{ManufacturedRow, PairingRow, ReportRow};
pub use study::{run_convergence, ConvergenceStudy};
pub use twoscale::{run_twoscale, TwoScaleReport};
