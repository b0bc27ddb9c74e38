use std::path::PathBuf;

use repalign_core::analysis::AnalysisError;
use repalign_core::matching::MatchingError;
use repalign_core::metrics::MetricsError;
use repalign_core::sae::SaeError;
use repalign_core::statmodel::StatModelError;

use crate::formats::FormatError;
use crate::manifest::ManifestError;
use crate::report::ReportError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sae(#[from] SaeError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    StatModel(#[from] StatModelError),
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
    #[error("model '{model}': no SAE artifact at {tried} (set sae_path in the manifest or pass --sae-dir)")]
    MissingSae { model: String, tried: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Attaches a human-readable context to errors from the core crate.
pub trait Context<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<CoreError>> Context<T> for std::result::Result<T, E> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| LabError::Core { context: context(), source: e.into() })
    }
}
