use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for dimension {ambient}")]
    IndexOutOfRange { index: usize, ambient: usize },

    #[error("invalid selection set: {0}")]
    InvalidSelection(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Kruskal-rank search over {columns} columns exceeds the cap of {cap}; use a generic (probabilistic) check instead")]
    KruskalCap { columns: usize, cap: usize },

    #[error("solver diverged at iteration {iteration}: objective {objective}")]
    Diverged { iteration: usize, objective: f64 },

    #[error("plan coverage: {mode} index {index} is observed by no term")]
    Coverage { mode: &'static str, index: usize },

    #[error("sampling rules violated: {0}")]
    RulesViolated(String),

    #[error("not provably recoverable: {0}")]
    NotIdentifiable(String),

    #[error("Khatri-Rao system is numerically rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("algebraic initialization not applicable: {0}")]
    AlgebraicInit(String),

    #[error("alignment failed between patterns {reference} and {other}: {reason}")]
    Alignment {
        reference: usize,
        other: usize,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
