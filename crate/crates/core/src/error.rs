use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for gene `{gene}`, subject `{subject}`")]
    NonFinite { gene: String, subject: String },

    #[error("need at least {required} subjects, got {n}")]
    TooFewSubjects { n: usize, required: usize },

    #[error("phenotype is constant; every statistic is degenerate")]
    ConstantPhenotype,

    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),

    #[error("gene set `{0}` has no members in the expression matrix")]
    EmptyGeneSet(String),

    #[error("gene `{gene}` has a constant expression row (set `{set}`)")]
    ConstantGene { set: String, gene: String },

    #[error("gene `{gene}` in set `{set}` has negative weight {weight}")]
    NegativeWeight { set: String, gene: String, weight: f64 },

    #[error("no explicit weight for gene `{gene}` in set `{set}`")]
    MissingWeight { set: String, gene: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate reference distribution: {0}")]
    Degenerate(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {}", ids.join(", "))]
    UnmatchedIds { context: String, ids: Vec<String> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
