//! Library side of the `perfrank` command: configuration, the experiment
//! pipeline, metrics persistence and reports.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Schema or validation problems, one message per line.
    #[error("{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn from_core(e: perfrank_core::Error) -> Self {
        Self::Run(e.to_string())
    }

    pub fn io(e: impl std::fmt::Display) -> Self {
        Self::Io(e.to_string())
    }

    /// Process exit status: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}
