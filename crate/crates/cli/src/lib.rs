//! Command-line driver: JSON configs in, CSV metrics and SVG plots out.

pub mod config;
pub mod error;
pub mod lossless;
pub mod plot;
pub mod run;

pub use config::{RunConfig, SweepSpec};
pub use error::{CliError, Result};
