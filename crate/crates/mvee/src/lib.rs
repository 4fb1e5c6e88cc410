//! Orchestration for multi-version experiment tracking: project config,
//! build/run driving, persisted state and the local HTTP API.

pub mod anomaly;
pub mod cli;
pub mod config;
pub mod graph_view;
pub mod project;
pub mod server;
pub mod state;

pub use config::{ConfigError, ProjectConfig};
pub use project::{BuildReport, Project, RunReport};
pub use state::{SourceState, StateDir};
