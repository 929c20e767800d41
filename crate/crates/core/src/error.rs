use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or construction parameter is out of range.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A forward trace was used after the model it came from was mutated.
    #[error("stale forward trace: model version {model}, trace version {trace}")]
    StaleTrace { model: u64, trace: u64 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("barrier already knocked out: barrier/spot = {0} <= 1")]
    KnockedOut(f64),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("gradient probe failed on coordinate {coord}: {source}")]
    GradientProbe {
        coord: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampling starved: accepted {accepted} of {requested} after {draws} draws")]
    SamplingStarvation {
        requested: usize,
        accepted: usize,
        draws: usize,
    },

    #[error("labeling failed at sample {index}: {source}")]
    Labeling {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("incompatible sets: {0}")]
    IncompatibleSets(String),

    #[error("ascent failed at iterate {iterate:?}: {source}")]
    Ascent {
        iterate: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failure mid-computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::Shape { .. }
                | Error::Domain(_)
                | Error::IncompatibleSets(_)
                | Error::EmptyInput(_)
                | Error::Parse { .. }
                | Error::Checkpoint(_)
        )
    }
}
