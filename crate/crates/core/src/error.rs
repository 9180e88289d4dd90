use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A node id or parent link that does not fit the tree.
    #[error("structural error: {0}")]
    Structural(String),

    #[error(
        "budget exceeded: tree holds {have} nodes, adding {adding} would exceed budget {budget}"
    )]
    Budget {
        have: usize,
        adding: usize,
        budget: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An empty candidate pool was handed to a selection rule.
    #[error("gating error: {0}")]
    Gating(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
