use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("amplitude out of range: {0}")]
    AmplitudeOutOfRange(f64),
    #[error("channels have unequal lengths")]
    RaggedChannels,
    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: &'static str, got: usize },
    #[error("mismatched lengths: {0} vs {1}")]
    MismatchedLengths(usize, usize),
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("class {label:?} has {count} examples, need at least 2")]
    TooFewExamples { label: String, count: usize },
    #[error("scene infeasible: {0}")]
    SceneInfeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("count {count} out of range 0..={max}")]
    CountOutOfRange { count: usize, max: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
