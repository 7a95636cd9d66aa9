//! Configuration, parallel ensembles, check suites and reports for `sgdm-core`.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{CheckName, RunConfig};
pub use error::{HarnessError, Result};
pub use experiment::run_experiment;
pub use report::Report;
