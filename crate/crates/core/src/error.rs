use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("step {t} out of range [{lo}, {hi}]")]
    StepRange { t: usize, lo: usize, hi: usize },

    #[error("hermitian symmetry violated: imaginary residue {residue:e} after inverse transform")]
    SymmetryViolation { residue: f64 },

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("malformed image at byte {offset}: {msg}")]
    Image { offset: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// `line` is 1-based; 0 marks a command-line override.
    #[error("config {}: {msg}", location(*.line))]
    Config { line: usize, msg: String },

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(line: usize) -> String {
    if line == 0 {
        "override".into()
    } else {
        format!("line {line}")
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Sizing(_) => "sizing",
            Error::Shape(_) => "shape",
            Error::Invalid(_) => "invalid",
            Error::StepRange { .. } => "step_range",
            Error::SymmetryViolation { .. } => "symmetry",
            Error::NonFinite { .. } => "non_finite",
            Error::Image { .. } => "image",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config { .. } => "config",
            Error::UnknownKeys(_) => "unknown_keys",
            Error::Io { .. } => "io",
        }
    }
}
