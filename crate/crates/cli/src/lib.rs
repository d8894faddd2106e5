//! Command-line front end and HTTP service for `dtesim`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod runner;
pub mod service;

pub use config::RunConfig;
pub use error::{ConfigError, RunError};
pub use runner::{run, run_with_jobs, Command, Progress, ResultDocument};
