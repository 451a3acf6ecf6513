//! Error type shared by every module in the crate.

use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, datasets, models, and the analysis pipeline.
#[derive(Debug)]
pub enum Error {
    /// Shapes that cannot be combined; the message names both shapes (and the
    /// layer index when raised inside a forward pass).
    Dimension(String),
    /// A file does not follow its declared format.
    Format(String),
    /// Two inputs that must agree (counts, suite sizes) do not.
    Consistency(String),
    /// A parameter is outside its documented range.
    Parameter(String),
    /// An index is out of range.
    Index(String),
    /// An operation received an empty input.
    EmptyInput(&'static str),
    /// A probability vector (or similar domain value) is invalid.
    Domain(String),
    /// Mismatched artifacts, e.g. a mask built for a different layer.
    Config(String),
    /// No training example of the named class qualified for the reference set.
    EmptyReferenceSet { class: usize },
    /// A stored activation profile cannot support the requested score.
    Profile(String),
    /// The metric is undefined for this input (e.g. a suite with no faults).
    NotApplicable(&'static str),
    /// A numeric operation produced NaN or infinity.
    Numeric(String),
    /// An I/O failure; always carries the offending path.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A JSON file failed to parse or validate.
    Json { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Json {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by invalid inputs or configuration (CLI exit
    /// code 2), false for runtime/numeric failures (exit code 3).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numeric(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Consistency(msg) => write!(f, "consistency error: {msg}"),
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::EmptyReferenceSet { class } => {
                write!(
                    f,
                    "no qualifying reference examples for class {class}; lower the confidence threshold"
                )
            }
            Error::Profile(msg) => write!(f, "profile error: {msg}"),
            Error::NotApplicable(what) => write!(f, "metric not applicable: {what}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Json { path, detail } => {
                write!(f, "invalid json in {}: {detail}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
