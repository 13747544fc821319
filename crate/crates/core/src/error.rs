use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A coefficient or integrand returned NaN/inf.
    #[error("non-finite {what} at x = {at}")]
    NonFinite { what: &'static str, at: f64 },

    #[error("solver aborted at time level {level}, node {node} (x = {x}): {source}")]
    Solver {
        level: usize,
        node: usize,
        x: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("Monte Carlo sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_node(self, level: usize, node: usize, x: f64) -> Self {
        Error::Solver {
            level,
            node,
            x,
            source: Box::new(self),
        }
    }
}
