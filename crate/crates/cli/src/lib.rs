//! Scenario runner for the `twoweight` library: reads a JSON scenario,
//! evaluates the selected suites on every instance and emits a report.

pub mod report;
pub mod run;
pub mod scenario;

pub use report::Report;
pub use run::run_scenario;
pub use scenario::{Scenario, Suite};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "TWOWEIGHT_THREADS";
