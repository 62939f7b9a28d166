use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(String),

    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("grid file: {0}")]
    Grid(String),

    #[error(transparent)]
    Core(#[from] cpfsim_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn field(field: &str, message: String) -> Self {
        CliError::Field { field: field.to_string(), message }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
