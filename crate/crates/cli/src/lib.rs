//! Configuration-driven runner: evolution, exact oracle runs, comparison
//! and analysis, all sharing one CSV layout.

pub mod analyze;
pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{OracleSettings, RunConfig, SCHEMA_VERSION};
pub use error::{CliError, Result};
