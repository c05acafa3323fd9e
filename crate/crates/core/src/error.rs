use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("empty ROI")]
    EmptyRoi,
    #[error("degenerate histogram")]
    DegenerateHistogram,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("placement failure: {0}")]
    PlacementFailure(String),
    #[error("insufficient rank: eigenvalue {eigenvalue:e} at component {index}")]
    InsufficientRank { index: usize, eigenvalue: f64 },
    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,
    #[error("empty surface")]
    EmptySurface,
    #[error("overlapping masks: keep and others share {0} pixels")]
    OverlappingMasks(usize),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    pub(crate) fn len(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
