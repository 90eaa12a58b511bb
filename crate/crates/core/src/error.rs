use thiserror::Error;

/// Errors raised by the solver modules and the command-line harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field is not divergence-free (residual {residual:.3e} > tolerance {tol:.3e})")]
    NotDivergenceFree { residual: f64, tol: f64 },

    #[error("insufficient angular resolution: n_theta = {n_theta}, need at least {required}")]
    InsufficientResolution { n_theta: usize, required: usize },

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("unsupported exponent p = {0}")]
    UnsupportedP(f64),

    #[error("need at least {required} samples in the fit window, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("decay fit needs positive values")]
    NonpositiveValues,

    #[error("parameters out of range: {0}")]
    OutOfRange(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("blow-up guard tripped at t = {t:.6e}: norm grew by factor {factor:.3e}")]
    BlowUp { t: f64, factor: f64 },

    #[error("time step {dt:.3e} violates the CFL bound {bound:.3e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("Kato iteration failed to contract (ratios {ratios:?})")]
    NoContraction { ratios: Vec<f64> },

    #[error("config error at key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("unknown preset `{0}`")]
    PresetUnknown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
