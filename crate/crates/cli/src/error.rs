use std::path::{Path, PathBuf};

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] limbnet_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Cache(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "config",
            CliError::MissingCheckpoint(_) => "checkpoint",
            CliError::Io { .. } => "io",
            CliError::Cache(_) => "cache",
        }
    }

    /// The message without the category wording the core errors carry.
    pub fn detail(&self) -> String {
        use limbnet_core::Error as E;
        let text = match self {
            CliError::Core(E::Config(m) | E::Numeric(m) | E::Data(m) | E::Checkpoint(m) | E::Unsupported(m)) => m.clone(),
            other => other.to_string(),
        };
        text.replace('\n', " ")
    }
}
