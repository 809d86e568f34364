use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no schedule entry covers time of day {0} s")]
    UncoveredTime(u32),
    #[error("controller invariant violated at t={clock}: {detail}")]
    InvariantViolation { clock: i64, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("record has no timestamp")]
    MissingTimestamp,
    #[error("variable `{0}` is constant over the sample days")]
    DegenerateVariable(String),
    #[error("empty span [{start}, {end}]")]
    EmptySpan { start: i64, end: i64 },
    #[error("feature width {found} does not match manifest width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("manifest hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in batch {batch}: {detail}")]
    NonFiniteActivation { batch: usize, detail: String },
    #[error("loss has no valid target entries")]
    NoValidEntries,
    #[error("reports were computed over different test sets")]
    MismatchedTestSets,

    #[error("bad container `{path}`: {detail}")]
    Container { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
