use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("phantom generation failed: {0}")]
    Generation(String),

    #[error("unstable time step: courant number {courant:.4} exceeds the 2D limit {limit:.4}")]
    Stability { courant: f64, limit: f64 },

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("bad container field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("truncated container: needed {needed} bytes for {section}, found {available}")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("prediction program failed: {0}")]
    Predictor(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable name of the error class for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Generation(_) => "generation",
            Error::Stability { .. } => "stability",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::Predictor(_) => "predictor",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
