//! Command implementations behind the `ldqbd` binary.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

pub use commands::{run_command, Command, Report};
pub use config::AnalysisConfig;
pub use report::{Cell, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid generator:\n  {}", .0.join("\n  "))]
    Generator(Vec<String>),

    #[error(transparent)]
    Core(#[from] ldqbd::Error),

    #[error("validation disagreement: {0}")]
    Disagreement(String),

    #[error("cannot write {path}: {reason}")]
    Output { path: String, reason: String },
}

impl CliError {
    /// Process exit status: 2 configuration, 3 numerical failure,
    /// 4 validation disagreement, 5 non-convergence.
    pub fn exit_code(&self) -> i32 {
        use ldqbd::Error as E;
        match self {
            CliError::Config(_) | CliError::Generator(_) | CliError::Output { .. } => 2,
            CliError::Disagreement(_) => 4,
            CliError::Core(e) => match e {
                E::NonConvergence { .. } => 5,
                E::Model(_) | E::Coordinate { .. } | E::InvalidArgument(_) | E::RateSpec { .. } => 2,
                E::Singular { .. }
                | E::Dimension(_)
                | E::UndefinedConditional { .. }
                | E::RunawayTrajectory { .. }
                | E::Resource(_) => 3,
            },
        }
    }
}
