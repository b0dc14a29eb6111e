use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("network is disconnected: bus {0} is unreachable")]
    Disconnected(usize),
    #[error("unit {unit}: inertia must be positive, got {value}")]
    NonPositiveInertia { unit: usize, value: f64 },
    #[error("unknown unit {0}")]
    UnknownUnit(usize),
    #[error("eigen-solver did not converge")]
    EigenNoConvergence,
    #[error("defective spectrum: eigenvalues {0} and {1} are clustered")]
    Defective(String, String),
    #[error("mode index {0} out of range")]
    ModeIndex(usize),
    #[error("damping-ratio sensitivity undefined for a zero eigenvalue")]
    ZeroEigenvalue,
    #[error("all modes filtered out")]
    AllModesFiltered,
    #[error("invalid aggregate parameters: {0}")]
    InvalidAggregate(String),
    #[error("nadir time invalid: M/T - F_g >= D")]
    NadirTimeInvalid,
    #[error("aggregate response overdamped (zeta_s >= 1)")]
    Overdamped,
    #[error("zero total generation")]
    ZeroGeneration,
    #[error("malformed linear program: {0}")]
    MalformedLp(String),
    #[error("system is unstable")]
    Unstable,
    #[error("nonzero feedthrough: H2 norm is infinite")]
    NonzeroFeedthrough,
    #[error("simulation diverged at t = {0}")]
    Diverged(f64),
    #[error("invalid simulation settings: {0}")]
    InvalidSim(String),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("{0}")]
    Io(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 3 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidCase(_)
            | Error::Disconnected(_)
            | Error::NonPositiveInertia { .. }
            | Error::UnknownUnit(_)
            | Error::InvalidAggregate(_)
            | Error::InvalidSim(_)
            | Error::Io(_)
            | Error::Parse { .. }
            | Error::Validation(_) => 3,
            _ => 2,
        }
    }
}
