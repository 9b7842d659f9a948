use thiserror::Error;

/// Errors shared by every subsystem of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got {0} elements")]
    NotScalar(usize),
    #[error("effective kernel {kernel} exceeds spatial extent {extent}")]
    KernelTooLarge { kernel: usize, extent: usize },
    #[error("{bins} pooling bins exceed spatial extent {extent}")]
    BinTooMany { bins: usize, extent: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("no class has any support; metric undefined")]
    AllUndefined,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("bad hex color {0:?}")]
    BadHex(String),
    #[error("unknown mask colors: {0}")]
    UnknownColor(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("bad backbone spec: {0}")]
    BadSpec(String),
    #[error("input spatial dims {h}x{w} not divisible by {divisor}")]
    InputNotDivisible { h: usize, w: usize, divisor: usize },
    #[error("bad scaling coefficients: {0}")]
    BadCoefficients(String),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("channel sums deviate from 1 by {0}; expected softmax probabilities")]
    NotNormalized(f64),
    #[error("model predicts {model} classes but palette has {palette}")]
    ClassCountMismatch { model: usize, palette: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode failed for {path}: {reason}")]
    ImageDecode { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::MissingFile(_)
            | Error::BadManifest(_)
            | Error::BadHex(_)
            | Error::UnknownColor(_)
            | Error::Io { .. }
            | Error::ImageDecode { .. } => 2,
            _ => 3,
        }
    }
}
