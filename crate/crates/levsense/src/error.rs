use std::path::PathBuf;

use crate::config::ConfigError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] levsense_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("selftest failed: {0} of 12 criteria did not pass")]
    SelftestFailed(usize),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        AppError::Format {
            what,
            detail: detail.into(),
        }
    }

    /// 1 for rejected input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use levsense_core::Error as E;
        match self {
            AppError::Config(_) | AppError::Usage(_) | AppError::Format { .. } => 1,
            AppError::Core(e) => match e {
                E::InvalidParameter { .. }
                | E::Domain(_)
                | E::StepTooCoarse { .. }
                | E::InvalidSchedule(_)
                | E::Schedule(_)
                | E::InsufficientData { .. } => 1,
                _ => 2,
            },
            AppError::Io { .. } | AppError::SelftestFailed(_) => 2,
        }
    }
}
