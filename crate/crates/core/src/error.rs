use thiserror::Error;

/// Errors produced by the solver laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid significand width {0}: expected 2..=53 bits")]
    InvalidPrecision(u32),

    #[error("non-finite operand in {0}")]
    NonFinite(String),

    #[error("division by zero")]
    DivisionByZero,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("precision inversion: {lo_role} ({lo} bits) is coarser than {hi_role} ({hi} bits)")]
    PrecisionInversion {
        hi_role: &'static str,
        hi: u32,
        lo_role: &'static str,
        lo: u32,
    },

    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },

    #[error("matrix is not positive definite: {0}")]
    NotSpd(String),

    #[error("eigenvalue iteration did not converge after {steps} steps (partial estimate {estimate})")]
    PowerIterationStalled { steps: usize, estimate: f64 },

    #[error("smoother is not energy-contractive: estimated |G|_A = {0}")]
    NotContractive(f64),

    #[error("work precision too coarse for kappa: tau = {0} >= 1")]
    WorkPrecisionTooCoarse(f64),

    #[error(
        "precision ladder violates vartheta > 1 (vartheta = {0}); \
         precision must coarsen slower than the pseudo mesh for the V-cycle error bound"
    )]
    ViolatedPrecisionLadder(f64),

    #[error("outer iteration not contracting: rho_v + delta_rho_ir = {0} >= 1")]
    OuterNotContracting(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures of the mathematics (divergence, hypothesis violations)
    /// as opposed to usage or I/O problems. The CLI maps these to exit code 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NotSpd(_)
                | Error::NotContractive(_)
                | Error::PowerIterationStalled { .. }
                | Error::WorkPrecisionTooCoarse(_)
                | Error::ViolatedPrecisionLadder(_)
                | Error::OuterNotContracting(_)
        )
    }
}
