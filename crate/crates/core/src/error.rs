use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Random graph generation gave up.
    #[error("graph generation failed: {0}")]
    Generation(String),

    /// The network structure does not satisfy an operation's requirement.
    #[error("structure error: {0}")]
    Structure(String),

    /// `I - L` has a negative entry; the Laplacian needs rescaling first.
    #[error("I - L has negative entry {value:e} at ({row}, {col}); rescale the Laplacian")]
    Scaling { row: usize, col: usize, value: f64 },

    /// Iterative numerical routine did not converge or a solve failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A call that violates an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Vector or matrix dimensions disagree.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Experiment configuration problem, with the 1-based line when known.
    #[error("config error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by user input rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Config { .. } | Error::Contract(_) | Error::Shape { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
