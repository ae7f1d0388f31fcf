//! Library surface of the `omni` CLI: config model, artifact layout and
//! stage runners, kept callable so integration tests can drive the
//! pipeline in-process.

pub mod config;
pub mod paths;
pub mod stages;

pub use config::{Config, ConfigError, Overrides};
pub use paths::StagePaths;
pub use stages::{run_stage, Stage, StageError, StageReport};
