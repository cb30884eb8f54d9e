use crate::kernel::Status;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("missing iterate state: {0}")]
    MissingState(&'static str),

    #[error("no lowering rule for piece kind `{0}` in this position")]
    UnsupportedPiece(&'static str),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("duals unavailable: solver finished with status {0:?}")]
    DualsUnavailable(Status),

    #[error("cannot probe the value function at the boundary: r[{index}] = {value}")]
    BoundaryProbe { index: usize, value: f64 },

    #[error("lower-level solve failed at r = {r:?}, u = {u:?}: {source}")]
    LowerLevel {
        r: Vec<f64>,
        u: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration {iteration} failed: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { context, expected, got })
        }
    }
}
