//! Command layer for the `localgcl` binary: flat-text config handling, the
//! run manifest, and the four subcommand implementations (train / eval /
//! ablate / probe). `main.rs` only parses arguments and maps [`CliError`] to
//! an exit code.

pub mod commands;
pub mod config;

use thiserror::Error;

use localgcl::data::DataError;
use localgcl::eval::EvalError;
use localgcl::trainer::{CheckpointError, TrainError};

/// Exit codes: 0 ok, 2 config error, 3 data error (datasets, checkpoints,
/// i/o), 4 numerical divergence.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Train(TrainError::Config { .. }) => 2,
            CliError::Train(TrainError::Diverged { .. }) => 4,
            CliError::Train(_)
            | CliError::Data(_)
            | CliError::Eval(_)
            | CliError::Checkpoint(_)
            | CliError::Io(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Train(TrainError::Config { msg: "x".into() }).exit_code(), 2);
        assert_eq!(CliError::Train(TrainError::Diverged { epoch: 3 }).exit_code(), 4);
        assert_eq!(CliError::Data(DataError::EmptyBatch).exit_code(), 3);
        assert_eq!(
            CliError::Checkpoint(CheckpointError::UnsupportedVersion("v9".into())).exit_code(),
            3
        );
        assert_eq!(CliError::Eval(EvalError::NotEnoughClasses { found: 1 }).exit_code(), 3);
    }
}
