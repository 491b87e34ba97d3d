use crate::types::GroupId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("group {0} is not covered by this classifier or dataset")]
    UnknownGroup(GroupId),

    #[error("no records to evaluate")]
    EmptyRecords,

    #[error("group {0} has no records")]
    GroupAbsent(GroupId),

    /// No positive predictions, so Pr[Y=0 | f=1] is undefined.
    #[error("false discovery rate is undefined without positive predictions")]
    UndefinedFdr,

    #[error("no classifier satisfies the constraints: {0}")]
    Infeasible(String),

    #[error("training pool holds a single label class")]
    DegeneratePool,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("missing exploration proportion for group {0}")]
    MissingGroupProportion(GroupId),

    #[error("label already observed for this sample")]
    LabelAlreadyObserved,

    #[error("call out of order: {0}")]
    Sequence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid probability: {0}")]
    Probability(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Solver failures that the engine answers by reusing the previous classifier.
    pub fn is_training_signal(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_) | Error::DegeneratePool | Error::Empty("training pool")
        )
    }
}
