use lobrm_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("time decreases at line {line}")]
    NonMonotonicTime { line: usize },
    #[error("crossed book at line {line}")]
    CrossedBook { line: usize },
    #[error("{messages} messages but {rows} book rows")]
    LengthMismatch { messages: usize, rows: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("time span is zero")]
    DegenerateSpan,
    #[error("timestamps not strictly increasing at index {index}")]
    NonIncreasingTime { index: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("standard deviation must be positive, got {0}")]
    ZeroStd(f64),
    #[error("mean must be positive, got {0}")]
    ZeroMean(f64),
    #[error("need at least {need} events, have {have}")]
    TooFewEvents { have: usize, need: usize },
    #[error("need at least {need} days, have {have}")]
    NotEnoughDays { have: usize, need: usize },
    #[error("price offset {diff} is not a multiple of tick {tick}")]
    OffGrid { diff: i64, tick: i64 },
    #[error("trade direction must be +1 or -1, got {0}")]
    BadDirection(i64),
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("need at least 2 hourly buckets, have {0}")]
    TooFewBuckets(usize),
    #[error("series of {have} points is too short for horizon {horizon}")]
    TooShortSeries { have: usize, horizon: usize },
    #[error("convolution input has odd width {0}")]
    OddFeatureCount(usize),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: String, epoch: usize },
    #[error("gradient check failed: relative error {max_rel_error} exceeds {tolerance}")]
    GradientMismatch { max_rel_error: f64, tolerance: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | Json(_) => ErrorClass::Config,
            MalformedRow { .. }
            | NonMonotonicTime { .. }
            | CrossedBook { .. }
            | LengthMismatch { .. }
            | EmptyInput
            | NonIncreasingTime { .. }
            | TooFewEvents { .. }
            | NotEnoughDays { .. }
            | OffGrid { .. }
            | BadDirection(_)
            | EmptyTestSet
            | TooFewBuckets(_)
            | TooShortSeries { .. }
            | OddFeatureCount(_)
            | Io(_) => ErrorClass::Data,
            DegenerateSpan
            | ZeroVariance(_)
            | ZeroStd(_)
            | ZeroMean(_)
            | SingularSystem
            | NonFinite { .. }
            | GradientMismatch { .. }
            | Autodiff(_) => ErrorClass::Numeric,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            MalformedRow { .. } => "MalformedRow",
            NonMonotonicTime { .. } => "NonMonotonicTime",
            CrossedBook { .. } => "CrossedBook",
            LengthMismatch { .. } => "LengthMismatch",
            EmptyInput => "EmptyInput",
            DegenerateSpan => "DegenerateSpan",
            NonIncreasingTime { .. } => "NonIncreasingTime",
            ZeroVariance(_) => "ZeroVariance",
            ZeroStd(_) => "ZeroStd",
            ZeroMean(_) => "ZeroMean",
            TooFewEvents { .. } => "TooFewEvents",
            NotEnoughDays { .. } => "NotEnoughDays",
            OffGrid { .. } => "OffGrid",
            BadDirection(_) => "BadDirection",
            SingularSystem => "SingularSystem",
            EmptyTestSet => "EmptyTestSet",
            TooFewBuckets(_) => "TooFewBuckets",
            TooShortSeries { .. } => "TooShortSeries",
            OddFeatureCount(_) => "OddFeatureCount",
            NonFinite { .. } => "NonFinite",
            GradientMismatch { .. } => "GradientMismatch",
            InvalidConfig(_) => "InvalidConfig",
            Autodiff(_) => "Autodiff",
            Io(_) => "Io",
            Json(_) => "Json",
        }
    }
}
