use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// One message per offending field.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] featreplay_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(field: impl std::fmt::Display, detail: impl std::fmt::Display) -> Self {
        CliError::Config(vec![format!("{field}: {detail}")])
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
