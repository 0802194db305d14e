//! File-based pipeline behind the `qber-risk` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::{report, risk, run_all, simulate, test, train};
