//! Batch runner for the duality bounds: reads a TOML run description, runs
//! one estimator family over a registered benchmark and writes `report.json`
//! (plus `series.csv` when there is something to plot).
//!
//! Exit status is 0 on success, 1 on any configuration or estimator error and
//! 2 when a weak-duality gap check fails.

pub mod config;
pub mod report;
pub mod run;
pub mod series;

pub use config::{RunConfig, Subcommand};
pub use report::{Report, Status};
pub use run::{run, Outcome, REPORT_FILE, SERIES_FILE};

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "DUALITY_WORKERS";
