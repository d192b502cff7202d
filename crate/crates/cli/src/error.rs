use figpriv_core::agents::AgentError;
use figpriv_core::metrics::MetricsError;
use figpriv_core::pipeline::{ErrorClass, PipelineError};
use figpriv_core::risk::RiskError;
use figpriv_core::taxonomy::TaxonomyError;
use thiserror::Error;

/// Errors surfaced by a command, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Transport(_) => 4,
        }
    }

    pub fn from_class(class: ErrorClass, message: String) -> Self {
        match class {
            ErrorClass::Config => CliError::Config(message),
            ErrorClass::Data => CliError::Data(message),
            ErrorClass::Transport => CliError::Transport(message),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::from_class(e.class(), e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        PipelineError::Agent(e).into()
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::Config(_) | RiskError::Io(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        match e {
            TaxonomyError::UnknownCategory(_)
            | TaxonomyError::UnknownFormat(_)
            | TaxonomyError::BadThreshold(_)
            | TaxonomyError::Io(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(_) => CliError::Config(e.to_string()),
            MetricsError::Agent(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
