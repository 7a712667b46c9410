//! Configuration, orchestration and report output for the `boltzmann` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_check, cmd_example56, cmd_simulate, cmd_spectrum, Example56Row};
pub use config::{OutputFormat, RunConfig};
pub use report::{Report, Synthesis};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}
