//! File formats, sidecar client and the pipeline driver behind the `merge`
//! command.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod remote;
pub mod reports;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
