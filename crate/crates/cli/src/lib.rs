//! Library surface of the command-line harness, so the binary and the
//! integration tests share one implementation.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod error;
pub mod pipeline;

pub use compare::{compare, ComparisonReport};
pub use config::{CheckName, Preset, RunConfig, Targets};
pub use error::{CliError, Result};
pub use pipeline::{check_manifest, run_pipeline, RunManifest, RunReport};
