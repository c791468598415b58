use std::path::Path;

use thiserror::Error;

/// Exit code 2 for usage and parse failures, 3 for numeric or validation
/// failures on well-formed input.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) => 2,
            CliError::Numeric(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<trec_core::Error> for CliError {
    fn from(e: trec_core::Error) -> Self {
        if e.is_parse() {
            CliError::Parse(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                trec_core::Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    trec_core::ScheduleError,
    trec_core::EmaError,
    trec_core::TrecError,
    trec_core::PredictError,
    trec_core::SimError,
    trec_core::PlacementError,
    trec_core::placement::RecipeParseError
);
