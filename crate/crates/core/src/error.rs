use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    Shape { shape: Vec<usize>, len: usize },

    #[error("{0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{0}")]
    Usage(String),

    #[error("incompatible architecture at boundary {boundary}: {reason}")]
    Build { boundary: usize, reason: String },

    #[error("layer index {index} out of range (network has {max} boundaries)")]
    LayerIndex { index: usize, max: usize },

    #[error("bad model file magic: expected MIXSEMI1")]
    BadMagic,

    #[error("truncated model payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("parameter count mismatch: architecture needs {expected}, file declares {found}")]
    ParamCount { expected: usize, found: usize },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::Shape { .. } => "dimension",
            Error::Validation(_) => "validation",
            Error::Parameter(_) => "parameter",
            Error::Usage(_) => "usage",
            Error::Build { .. } => "build",
            Error::LayerIndex { .. } => "layer-index",
            Error::BadMagic | Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::ParamCount { .. } => "count",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
        }
    }
}
