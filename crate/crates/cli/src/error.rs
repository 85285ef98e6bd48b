use std::fmt;
use std::process::ExitCode;

use dialparse::ablation::AblationError;
use dialparse::backend::BackendError;
use dialparse::corpus::CorpusError;
use dialparse::engine::EngineError;
use dialparse::metrics::MetricsError;
use dialparse::preprocess::PreprocessError;
use dialparse::taxonomy::TaxonomyError;

/// Failure of a command, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Input(String),
    Backend(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Backend(_) => "backend",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
        })
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Input(m) | CliError::Backend(m) => m,
        }
    }

    /// One JSON object on one line, for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

pub fn config(msg: impl fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

pub fn input(msg: impl fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        input(e)
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        input(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        input(e)
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        input(e)
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        config(e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) | BackendError::InvalidRequest(_) => config(e),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Backend(b) => b.into(),
            EngineError::Config(_) => config(e),
            other => input(other),
        }
    }
}
