use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("eigendecomposition did not converge")]
    ConvergenceFailure,
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error("receive filters have not been computed")]
    MissingReceiver,
    #[error("true CR-to-PU channel is not available")]
    MissingTrueChannel,
    #[error("inconsistent subproblem: missing {0}")]
    InconsistentSpec(String),
    #[error("numerical breakdown in SDP solver: {0}")]
    NumericalBreakdown(String),
    #[error("certificate check failed: {0}")]
    CertificateFailure(String),
    #[error("solver failed at cycle {cycle}, link {link}: {reason}")]
    SolverFailure {
        cycle: usize,
        link: usize,
        reason: String,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("value out of range at line {line}: {msg}")]
    Range { line: usize, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
