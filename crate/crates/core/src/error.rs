use std::path::PathBuf;
use thiserror::Error;

use crate::config::ConfigError;
use crate::fusion::FusionError;
use crate::graph::GraphError;
use crate::ingest::IngestError;
use crate::providers::ProviderError;
use crate::reasoning::ReasoningError;
use crate::search::SearchError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("validation failed: {0}")]
    Validation(String),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Provider,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Provider(_) => ErrorClass::Provider,
            Error::Reasoning(e) if e.is_provider_failure() => ErrorClass::Provider,
            Error::Search(SearchError::Provider(_)) => ErrorClass::Provider,
            _ => ErrorClass::Data,
        }
    }
}
