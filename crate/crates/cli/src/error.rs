use thiserror::Error;

use dxrank::corpus::CorpusError;
use dxrank::genmap::GenMapError;
use dxrank::icdmap::IcdError;
use dxrank::llrank::LlRankError;
use dxrank::metrics::MetricsError;
use dxrank::provider::ProviderError;

/// Command failures, each mapped to a process exit code.
#[derive(Error, Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 1.
    #[error("{0}")]
    Usage(String),

    /// The language model backend failed. Exit code 2.
    #[error("provider: {0}")]
    Provider(String),

    /// Some reports failed; the others were written. Exit code 3.
    #[error("{failed} of {total} report(s) failed; see {errors_file}")]
    Partial {
        failed: usize,
        total: usize,
        errors_file: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Provider(_) => 2,
            CliError::Partial { .. } => 3,
        }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidSpec(_)
            | ProviderError::Io(_)
            | ProviderError::Tokenizer(_)
            | ProviderError::Query(_) => CliError::Usage(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<IcdError> for CliError {
    fn from(e: IcdError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<LlRankError> for CliError {
    fn from(e: LlRankError) -> Self {
        match e {
            LlRankError::Provider(p) => p.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<GenMapError> for CliError {
    fn from(e: GenMapError) -> Self {
        match e {
            GenMapError::Provider(p) => p.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}
