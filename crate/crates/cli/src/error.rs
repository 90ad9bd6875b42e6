use std::path::PathBuf;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] zigam_core::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("missing artifact {}: run the producing subcommand first", .0.display())]
    MissingArtifact(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) | CliError::Toml(_) => "config",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
        }
    }

    fn stage(&self) -> Option<&'static str> {
        match self {
            CliError::Core(zigam_core::Error::Stage { stage, .. }) => Some(stage),
            _ => None,
        }
    }

    /// Machine-readable error envelope written to stderr.
    pub fn envelope(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "stage": self.stage(),
                "message": self.to_string(),
            }
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
