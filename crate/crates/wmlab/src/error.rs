/// Error taxonomy; variants map onto CLI exit codes (config 2, contract 3,
/// missing artifact 4, everything else 1).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("actions are not visible in this manifest")]
    ActionsHidden,
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Contract(_) => 3,
            Error::MissingArtifact(_) => 4,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Bounds(_) => "bounds",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::ActionsHidden => "actions_hidden",
            Error::Incompatible(_) => "incompatible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
