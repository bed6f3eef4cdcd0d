//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by any layer of the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}{}", context_suffix(context))]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    /// A vector entry is NaN or infinite.
    #[error("non-finite value {value} at index {index} in {context}")]
    NonFinite {
        index: usize,
        value: f64,
        context: &'static str,
    },

    /// A scalar function evaluated to NaN/Inf at a probe point.
    #[error("non-finite objective value at probe point (coordinate {coordinate}, offset {offset:+e})")]
    NonFiniteEvaluation { coordinate: usize, offset: f64 },

    /// An invalid scalar argument (out of range, non-finite, ...).
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// IDX file with an unexpected magic number.
    #[error("bad IDX magic number in {path}: got {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        got: u32,
        expected: u32,
    },

    /// IDX file ended before the declared payload.
    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    TruncatedIdx {
        path: String,
        expected: usize,
        found: usize,
    },

    /// Image and label files disagree on the record count.
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// A partition request that cannot be satisfied by the dataset.
    #[error("infeasible partition: {reason}")]
    InfeasiblePartition { reason: String },

    /// A label class required by a split has no samples.
    #[error("class {class} has no samples in the dataset")]
    EmptyClass { class: u32 },

    /// A local update produced a NaN/Inf iterate.
    #[error("divergence in {model} update at client {client}, local step {step}")]
    Divergence {
        client: usize,
        step: usize,
        model: &'static str,
    },

    /// A round failed; wraps the underlying error with the round index.
    #[error("round {round} failed: {source}")]
    RoundFailed {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// A requested trajectory was not recorded.
    #[error("missing trajectory for client {client}{}", step.map(|s| format!(", step {s}")).unwrap_or_default())]
    MissingTrajectory { client: usize, step: Option<usize> },

    /// Constant estimation asked for fewer probes than required.
    #[error("too few probe points: got {got}, need at least {need}")]
    TooFewProbes { got: usize, need: usize },

    /// Configuration file failed validation after parsing.
    #[error("config error in field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Configuration file failed to parse.
    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Malformed metrics log line.
    #[error("malformed log line {line} in {path}: {message}")]
    MalformedLog {
        path: String,
        line: usize,
        message: String,
    },

    /// Unsupported sweep axis.
    #[error("invalid sweep axis `{axis}`; valid axes: {valid}")]
    InvalidAxis { axis: String, valid: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::ConfigParse { .. }
            | Error::InvalidParameter { .. }
            | Error::InvalidAxis { .. } => 2,
            Error::Divergence { .. } => 3,
            Error::RoundFailed { source, .. } => source.exit_code(),
            Error::Io(_) => 4,
            _ => 1,
        }
    }
}
