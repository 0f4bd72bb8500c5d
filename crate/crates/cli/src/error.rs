use std::path::PathBuf;

use thiserror::Error;

use subscope_core::decompose::DecomposeError;
use subscope_core::interchange::InterchangeError;
use subscope_core::interpret::InterpretError;
use subscope_core::pipeline::PipelineError;
use subscope_core::synth::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: InterchangeError,
    },
    #[error("{path}: {source}")]
    Basis {
        path: PathBuf,
        #[source]
        source: DecomposeError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error("{0}")]
    Invalid(String),
}

impl From<subscope_core::subgroup::SubgroupError> for CliError {
    fn from(e: subscope_core::subgroup::SubgroupError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<subscope_core::mitigate::MitigateError> for CliError {
    fn from(e: subscope_core::mitigate::MitigateError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<subscope_core::evalmatch::MatchError> for CliError {
    fn from(e: subscope_core::evalmatch::MatchError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl CliError {
    /// Wraps a container error; I/O failures already carry the path.
    pub fn format(path: &std::path::Path, source: InterchangeError) -> Self {
        match source {
            InterchangeError::Io { path, source } => CliError::Io { path, source },
            source => CliError::Format { path: path.to_path_buf(), source },
        }
    }

    pub fn basis(path: &std::path::Path, source: DecomposeError) -> Self {
        match source {
            DecomposeError::Format(e) => Self::format(path, e),
            source => CliError::Basis { path: path.to_path_buf(), source },
        }
    }
}
