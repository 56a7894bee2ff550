use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integral of {0} is not finite")]
    NonFinite(&'static str),

    #[error("projection is undefined when the volume density is zero")]
    UndefinedProjection,

    #[error("expected point count {expected:.3e} exceeds the cap {cap:.3e}")]
    TooManyPoints { expected: f64, cap: f64 },

    #[error("rod length {0} is outside the representable range [0, 4096)")]
    LengthOutOfRange(f64),

    #[error("the origin is outside the window [{lo}, {hi}]")]
    OriginOutsideWindow { lo: f64, hi: f64 },

    #[error(
        "crossing range [{lo}, {hi}] of query (x={x}, v={v}, t={t}) leaves the window [{window_lo}, {window_hi}]"
    )]
    BufferViolation {
        x: f64,
        v: f64,
        t: f64,
        lo: f64,
        hi: f64,
        window_lo: f64,
        window_hi: f64,
    },

    #[error("tagged rod {index}: {source}")]
    Tagged {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("test function support violation: {0}")]
    Support(String),

    #[error("queries in one batch must share the same time")]
    MixedTimes,

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("found {found} eligible tagged rods, need 2")]
    TooFewTagged { found: usize },

    #[error("replica {index} (seed {seed:#018x}) failed: {source}")]
    ReplicaFailed {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
