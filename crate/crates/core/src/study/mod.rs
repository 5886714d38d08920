//! Lotka–Volterra coverage study: data generation, replication engine,
//! asymptotic diagnostics and reporting.

pub mod config;
pub mod data;
pub mod diag;
pub mod interval;
pub mod report;
pub mod run;

pub use config::{OneOrMany, StudyConfig};
pub use data::{generate_dataset, misspec_constants, TruthCurve, TRUTH_GRID};
pub use diag::{asymptotic_diagnostics, AsymptoticDiagnostics};
pub use interval::equal_tailed_interval;
pub use report::write_study_outputs;
pub use run::{check_aborted, fit_method, run_study, run_study_with, ReplicationRecord, StudyResult, SummaryRow};
