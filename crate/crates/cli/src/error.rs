use serde::Serialize;
use thiserror::Error;

/// Failures of the runner, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error ({invariant}): {detail}")]
    Validation { invariant: String, detail: String },
    #[error("certification failure: {0}")]
    Certification(String),
    #[error(transparent)]
    Core(#[from] contlab::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn validation(invariant: &str, detail: impl Into<String>) -> Self {
        CliError::Validation {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation { .. } => 2,
            CliError::Certification(_) => 3,
            CliError::Core(e) => match e {
                contlab::Error::ProfileOutOfClass(_)
                | contlab::Error::InfeasibleStart { .. }
                | contlab::Error::InvalidArgument(_)
                | contlab::Error::GridMismatch(_)
                | contlab::Error::InconsistentSamples { .. } => 2,
                contlab::Error::CertificationFailed { .. } | contlab::Error::ConstructionFailed(_) => 3,
                _ => 4,
            },
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation { .. } => "validation",
            CliError::Certification(_) => "certification",
            CliError::Core(_) => "core",
            CliError::Io(_) => "io",
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Out {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error json")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
