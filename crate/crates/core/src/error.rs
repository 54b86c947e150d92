use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("degenerate vector in {op}: zero norm")]
    DegenerateVector { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGrad(String),

    #[error("non-finite value at parameter index {index}")]
    NonFinite { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown concept id {0}")]
    UnknownConcept(usize),

    #[error("unknown task `{task}`; known tasks: [{}]", known.join(", "))]
    UnknownTask { task: String, known: Vec<String> },

    #[error("duplicate id `{0}`")]
    DuplicateTask(String),

    #[error("knowledge base at capacity ({tasks} rows for width {width})")]
    KbAtCapacity { tasks: usize, width: usize },

    #[error("zero-shot target unmappable: {0}")]
    ZeroShotUnmappable(String),

    #[error("invalid category map entry: {0}")]
    InvalidCategoryMap(String),

    #[error("AUC undefined for single class")]
    SingleClass,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} would be empty after subsampling at fraction {fraction}")]
    EmptyClass { class: usize, fraction: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("empty dataset for task `{0}`")]
    EmptyDataset(String),

    #[error("non-finite loss at iteration {iteration}, task `{task}`, batch {batch}")]
    NonFiniteLoss {
        iteration: usize,
        task: String,
        batch: usize,
    },

    #[error("statistical test undefined: {0}")]
    UndefinedStatistic(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data isolation violation: site `{site}` does not own task `{task}`")]
    DataIsolation { site: String, task: String },

    #[error("site `{site}` failed: {source}")]
    SiteFailure {
        site: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
