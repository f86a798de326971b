use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point behind camera at frame {frame}, joint {joint} (depth {depth:.4})")]
    Projection { frame: usize, joint: usize, depth: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Domain(_)
                | Error::Config(_)
                | Error::Topology(_)
                | Error::Format(_)
                | Error::Json(_)
        )
    }
}
