use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol window {index} starting at {t_start_us} us captured no samples")]
    EmptyWindow { index: usize, t_start_us: i64 },

    #[error("schedule entry at {t_us} us lies outside the scenario duration ({duration_us} us)")]
    ScheduleOutOfRange { t_us: i64, duration_us: i64 },

    #[error("frame has {n} samples but the widest filter needs {required}")]
    FrameTooShort { n: usize, required: usize },

    #[error("parameter update produced a non-finite value at index {index}")]
    NonFiniteUpdate { index: usize },

    #[error("dataset contains a single class")]
    SingleClassDataset,

    #[error("binarization needs {required} windows with at least 2 samples, found {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("trace ends at {trace_end_us} us before the training payload ends at {needed_us} us")]
    TruncatedSequence { needed_us: i64, trace_end_us: i64 },

    #[error("training-sequence preamble not found after {attempts} attempts")]
    PreambleNotFound { attempts: u32 },

    #[error("experiments do not share scenario and seeds: {0}")]
    MismatchedScenarios(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed trace line {line}: {msg}")]
    MalformedTrace { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}
