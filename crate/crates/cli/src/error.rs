use serde_json::json;
use trackode::Error;

/// Failure of a command, mapped to exit code 2 (usage or input) or 1
/// (estimation).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        Self::Core(Error::Json(e))
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Core(e) => match e {
                Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::ParamIndex { .. } => "model-syntax",
                Error::ModelNotFound(_) => "model-not-found",
                Error::InvalidModel(_) => "invalid-model",
                Error::Dimension(_) => "dimension",
                Error::Dataset(_) => "dataset",
                Error::Grid(_) | Error::OutOfDomain { .. } => "grid",
                Error::Precondition(_) => "precondition",
                Error::RankDeficient { .. } | Error::NoFeasibleCandidate => "smoothing",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
                Error::NonFinite { .. } => "non-finite",
                Error::Divergence { .. } => "divergence",
                Error::GridResolution { .. } => "grid-resolution",
                Error::Singular(_) => "singular",
                Error::EstimationFailed { .. } => "estimation-failed",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(
                Error::NonFinite { .. }
                | Error::Divergence { .. }
                | Error::GridResolution { .. }
                | Error::Singular(_)
                | Error::EstimationFailed { .. },
            ) => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let message = match self {
            Self::Usage(m) => m.clone(),
            Self::Core(e) => e.to_string(),
        };
        json!({ "error": { "kind": self.kind(), "message": message }, "exit_code": self.exit_code() })
            .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}
