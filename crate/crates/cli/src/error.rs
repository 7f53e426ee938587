use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const PAIRING: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or invalid input: config, dataset, checkpoint or report.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Numerical(String),

    /// Two scored inputs do not cover the same samples.
    #[error("{0}")]
    Pairing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Pairing(_) => exit::PAIRING,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<cmac_core::Error> for CliError {
    fn from(e: cmac_core::Error) -> Self {
        use cmac_core::Error as E;
        match e {
            E::NonFiniteLoss { .. } | E::RetryCapExceeded { .. } | E::DegenerateVariance(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attach a location to a core error while keeping its exit class.
pub fn context<T>(r: cmac_core::Result<T>, what: &str) -> CliResult<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
        CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        CliError::Pairing(m) => CliError::Pairing(format!("{what}: {m}")),
    })
}
