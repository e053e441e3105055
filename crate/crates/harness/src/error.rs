use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] sit_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Self::Core(e) if e.is_divergence())
    }

    /// Process exit code: 2 for configuration problems, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            e if e.is_divergence() => 3,
            _ => 1,
        }
    }
}
