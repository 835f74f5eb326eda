use std::path::PathBuf;

/// Errors produced anywhere in the transfer engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },

    #[error("non-invertible configuration: {0}")]
    NonInvertible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("negative magnitude {value} at ({row}, {col})")]
    NegativeMagnitude { row: usize, col: usize, value: f64 },

    #[error("non-finite value at timestep {timestep}")]
    NonFinite { timestep: usize },

    #[error("missing feature cache entry for timestep {timestep}, layer {layer}")]
    MissingCacheEntry { timestep: usize, layer: usize },

    #[error("frame count mismatch: mel has {mel} frames, phase has {phase}")]
    FrameMismatch { mel: usize, phase: usize },

    #[error("filterbank mismatch: mel built with {expected}, got {actual}")]
    FilterbankMismatch { expected: String, actual: String },

    #[error("format error in {what}: {msg}")]
    Format { what: String, msg: String },

    #[error("checksum mismatch in blob `{0}`")]
    Checksum(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            msg: msg.into(),
        }
    }

    /// Name of the pipeline stage that failed, if the error was raised inside one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Attaches a pipeline stage name to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
