use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A Gibbs block could not produce a draw (e.g. a non-positive variance).
    #[error("conditional sampler for block {block} failed: {message}")]
    BlockSampler { block: usize, message: String },

    #[error("non-finite partial estimate at level {level}")]
    NonFinite { level: usize },

    #[error("accuracy target needs a level beyond the configured maximum level {max_level}")]
    MaxLevelExceeded { max_level: usize },

    #[error("degenerate coupling at level {level}: increments have zero variance while phi varies")]
    DegenerateCoupling { level: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("empty sample set: {0}")]
    EmptySample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
