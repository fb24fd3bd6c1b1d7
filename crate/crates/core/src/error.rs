use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("incomplete panel: subject {subject} has no row for response index {index}")]
    IncompletePanel { subject: String, index: i64 },

    #[error("duplicate key: subject {subject}, response index {index} (line {line})")]
    DuplicateKey {
        subject: String,
        index: i64,
        line: u64,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("singular design in block ({j},{k}): weighted normal equations are not positive definite")]
    SingularDesign { j: usize, k: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("non-finite derivative in block ({j},{k}) at entry ({row},{col})")]
    NonFiniteDerivative {
        j: usize,
        k: usize,
        row: usize,
        col: usize,
    },

    #[error("singular weight matrix for group {group}: smallest eigenvalue {min_eigenvalue:e} (the sample covariance of the scores is ill-defined; use fewer blocks or more subjects per group)")]
    SingularWeight { group: usize, min_eigenvalue: f64 },

    #[error("singular combined information (condition number {condition:e}); per-block sensitivity condition numbers: {per_block}")]
    SingularCombination { condition: f64, per_block: String },

    #[error("singular Godambe information")]
    SingularInformation,

    #[error("index out of range: {0}")]
    Index(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("block ({j},{k}) did not converge")]
    Unconverged { j: usize, k: usize },

    #[error("raw block data is required for {0}")]
    NeedsRawData(&'static str),

    #[error("incompatible bundles: {0}")]
    Merge(String),

    #[error("bundle archive error at line {line}: {message}")]
    Archive { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid simulation design: {0}")]
    Design(String),

    #[error("no successful replications to summarize")]
    EmptySummary,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
