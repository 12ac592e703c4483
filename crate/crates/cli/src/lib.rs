//! Pipeline orchestration behind the `twofive` command.

pub mod adapter_check;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::CliError;
