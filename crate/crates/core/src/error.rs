use chrono::NaiveDate;
use thiserror::Error;

/// Errors raised across the nowcasting pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NowcastError {
    #[error("malformed period string {0:?}")]
    MalformedPeriod(String),

    #[error("malformed date {0:?}")]
    MalformedDate(String),

    #[error("non-finite value for {series_id} {ref_period}")]
    NonFiniteValue {
        series_id: String,
        ref_period: String,
    },

    #[error("{series_id} {ref_period} published {published_at} before its reference period ends")]
    EarlyRelease {
        series_id: String,
        ref_period: String,
        published_at: NaiveDate,
    },

    #[error("frequency mismatch for {series_id}: period {ref_period} is not {expected}")]
    FrequencyMismatch {
        series_id: String,
        ref_period: String,
        expected: String,
    },

    #[error("conflicting values for {series_id} {ref_period} published on {published_at}")]
    PublicationTie {
        series_id: String,
        ref_period: String,
        published_at: NaiveDate,
    },

    #[error("no observation published on or before {0}")]
    EmptySnapshot(NaiveDate),

    #[error("observation log is empty")]
    EmptyLog,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),

    #[error("zero-variance window under standardize")]
    ZeroVariance,

    #[error("recipe references unknown series {0:?}")]
    UnknownSeries(String),

    #[error("target series {0:?} has no usable observations")]
    MissingTarget(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (kkt gap {gap:e})")]
    NonConvergence { sweeps: usize, gap: f64 },

    #[error("NIPALS did not converge for component {component}")]
    NipalsNonConvergence { component: usize },

    #[error("component count {requested} exceeds rank bound {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{method} is not available for family {family}")]
    UnsupportedFamily {
        method: &'static str,
        family: String,
    },

    #[error("invalid bootstrap configuration: {0}")]
    InvalidBootstrap(String),

    #[error("need at least {required} replicates for alpha {alpha}, got {got}")]
    InsufficientReplicates {
        required: usize,
        alpha: f64,
        got: usize,
    },

    #[error("{failed} of {total} bootstrap replicates failed")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("no forecast origin overlaps with published actuals")]
    NoOverlap,

    #[error("empty loss table")]
    EmptyTable,

    #[error("model id mismatch: {0}")]
    IdMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-additive attribution method {0}; use tree_shap, integrated_gradients or linear contributions for waterfalls")]
    NonAdditive(String),

    #[error("interval width exceeds tolerance but no benchmark forecast is available")]
    MissingBenchmark,

    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),

    #[error("release refused: leakage detected in {0:?}")]
    LeakageRefused(Vec<String>),

    #[error("incomplete release inputs: {0}")]
    IncompleteRelease(String),

    #[error("windows do not overlap: {0}")]
    DisjointWindows(String),

    #[error("invalid simulation spec: {0}")]
    InvalidDgp(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for NowcastError {
    fn from(e: std::io::Error) -> Self {
        NowcastError::Io(e.to_string())
    }
}

impl From<csv::Error> for NowcastError {
    fn from(e: csv::Error) -> Self {
        NowcastError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for NowcastError {
    fn from(e: serde_json::Error) -> Self {
        NowcastError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NowcastError>;
