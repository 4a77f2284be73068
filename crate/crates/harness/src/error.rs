use rankcomp_core::agents::AgentError;
use rankcomp_core::competition::CompetitionError;
use rankcomp_core::corpus::CorpusError;
use rankcomp_core::metrics::MetricError;
use rankcomp_core::prompts::PromptError;
use rankcomp_core::rankers::RankError;
use rankcomp_core::services::ServiceError;
use serde::Serialize;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data(_) | Self::Io { .. } => "data",
            Self::Transport(_) => "transport",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Data(_) | Self::Io { .. } => EXIT_DATA,
            Self::Transport(_) => EXIT_TRANSPORT,
        }
    }

    /// The machine-readable record printed on stderr before exiting.
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl From<ServiceError> for HarnessError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Transport { .. } => Self::Transport(e.to_string()),
            ServiceError::Protocol(_) => Self::Transport(e.to_string()),
        }
    }
}

impl From<CorpusError> for HarnessError {
    fn from(e: CorpusError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<RankError> for HarnessError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::Provider { .. } => Self::Transport(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<MetricError> for HarnessError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Service(s) => s.into(),
            MetricError::Rank(r) => r.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<PromptError> for HarnessError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Config(_) => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Service(s) => s.into(),
            AgentError::Rank(r) => r.into(),
            AgentError::Prompt(p) => p.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<CompetitionError> for HarnessError {
    fn from(e: CompetitionError) -> Self {
        match e {
            CompetitionError::Corpus(c) => c.into(),
            CompetitionError::Metric(m) => m.into(),
            CompetitionError::Rank(r) => r.into(),
            CompetitionError::Domain(d) => Self::Data(d),
        }
    }
}
