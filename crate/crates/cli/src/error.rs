use std::fmt::Display;
use std::path::Path;

use arena_fragility::agreement::AgreementError;
use arena_fragility::arenasim::ArenaError;
use arena_fragility::attribution::AttributionError;
use arena_fragility::config::ConfigError;
use arena_fragility::{CorruptionError, DataError, FitError};

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing or malformed inputs. Exit status 1.
    Invalid(String),
    /// Failure after validation succeeded (fits, I/O on outputs). Exit status 2.
    Runtime(String),
}

impl CliError {
    pub fn invalid(msg: impl Display) -> Self {
        CliError::Invalid(msg.to_string())
    }

    pub fn runtime(msg: impl Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// Prefixes the message with the offending input.
    pub fn at(self, path: &Path) -> Self {
        match self {
            CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
            CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonConvergence { .. } => CliError::runtime(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<CorruptionError> for CliError {
    fn from(e: CorruptionError) -> Self {
        match e {
            CorruptionError::Baseline(_) | CorruptionError::AllTrialsFailed { .. } => CliError::runtime(e),
            _ => CliError::invalid(e),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::invalid(e)
            }
        })*
    };
}

invalid_from!(DataError, ConfigError, AttributionError, AgreementError, ArenaError);
