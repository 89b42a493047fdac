use std::path::PathBuf;

use csm_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("unsupported channel count {0} (1 or 2 supported)")]
    UnsupportedChannels(usize),
    #[error("zero-length audio")]
    ZeroLength,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("signals too short for delay search: need {needed} samples, got {got}")]
    TooShortForLag { needed: usize, got: usize },
    #[error("silent reference: cannot scale levels")]
    SilentReference,
    #[error("all-silent pair")]
    AllSilent,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("model not found: {0}")]
    ModelNotFound(PathBuf),
    #[error("model schema error: {0}")]
    ModelSchema(String),
    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("missing calibration split: {0}")]
    MissingSplit(&'static str),
    #[error("insufficient signals for interaction metric: {0}")]
    InsufficientSignals(String),
    #[error("degenerate database: {0}")]
    DegenerateDatabase(String),
    #[error("empty database")]
    EmptyDatabase,
    #[error("config: {0}")]
    Config(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage and I/O problems, 1 for domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Wav { .. }
            | Error::ModelNotFound(_)
            | Error::ModelSchema(_)
            | Error::Manifest(_)
            | Error::ManifestRow { .. }
            | Error::Config(_)
            | Error::Cache(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
