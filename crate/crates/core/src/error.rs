use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size mismatch: expected n_max = {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// A kernel bound such as `K <= phi(x) phi(y)` fails on the grid.
    #[error("kernel hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid kernel specification: {0}")]
    Spec(String),

    #[error("parameter {lambda:?} leaves the parameter box: {detail}")]
    ParamBox { lambda: Vec<f64>, detail: String },

    /// Moment ceiling or overflow guard tripped; the solution window ends near `time`.
    #[error("blow-up detected at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("negative weight {weight:e} at mass {mass} (t = {time}): integration fault")]
    Negativity { time: f64, mass: usize, weight: f64 },

    #[error("backward solve fault at s = {time}: {reason}")]
    BackwardFault { time: f64, reason: String },

    #[error("series did not converge in {iterations} iterations (last distances {previous:e}, {last:e})")]
    SeriesDivergence {
        iterations: usize,
        previous: f64,
        last: f64,
    },

    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
