//! Process-level error classification.
//!
//! Every failure a command can hit collapses into one of two buckets with a
//! fixed exit code: operator mistakes (bad config, missing files, mismatched
//! shapes) exit 2, and numeric blow-ups during training (non-finite loss or
//! gradient) exit 3. Success exits 0, and clap reports its own usage errors
//! with its standard code.

use aloft::gan::GanError;
use aloft::optim::OptimError;
use aloft::run::RunError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

/// Shorthand for the dominant error case.
pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> CliError {
        match e {
            RunError::Numeric { step, msg } => {
                CliError::Numeric(format!("training diverged at step {step}: {msg}"))
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> CliError {
        match e {
            GanError::Numeric { epoch, batch, msg } => CliError::Numeric(format!(
                "gan training diverged at epoch {epoch}, batch {batch}: {msg}"
            )),
            GanError::Optim(OptimError::NonFiniteGradient { param }) => {
                CliError::Numeric(format!("gan training diverged: non-finite gradient for {param}"))
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Config(e.to_string())
    }
}
