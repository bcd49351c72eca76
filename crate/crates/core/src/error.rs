use thiserror::Error;

/// Errors produced by scenario handling and the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The scenario document does not match the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A parameter violates a hard admissibility bound.
    #[error("invalid parameter `{path}`: {reason}")]
    InvalidParameter { path: String, reason: String },

    /// The requested computation does not apply to this scenario.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// a^2 - 4bc < 0: the Riccati solution explodes in finite time.
    #[error("explosive Riccati solution for factor {factor}: a^2 - 4bc = {discriminant:e}")]
    ExplosiveSolution { factor: usize, discriminant: f64 },

    /// The closed-form denominator vanished (or changed sign) before tau.
    #[error("Riccati pole reached at tau = {tau}")]
    RiccatiPole { tau: f64 },

    /// A numerically integrated solution exceeded the blow-up bound.
    #[error("ODE solution blew up at tau = {tau} (|y| = {magnitude:e})")]
    BlowUp { tau: f64, magnitude: f64 },

    /// The exposure-loading matrix is singular or too badly conditioned.
    #[error("market incompleteness: loading matrix condition number {condition:e} exceeds 1e12")]
    MarketIncompleteness { condition: f64 },

    /// Fourier inversion did not converge.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// A series or special function failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The moment-matched volatility of sqrt(V) became imaginary.
    #[error("model breakdown at t = {t}: psi^2 = {value:e} < 0")]
    ModelBreakdown { t: f64, value: f64 },

    /// Too many Monte Carlo paths hit non-positive wealth.
    #[error("simulation failure: {flagged} of {total} paths hit non-positive wealth")]
    WealthExhausted { flagged: usize, total: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ExplosiveSolution { .. }
                | Error::RiccatiPole { .. }
                | Error::BlowUp { .. }
                | Error::MarketIncompleteness { .. }
                | Error::Quadrature(_)
                | Error::Numeric(_)
                | Error::ModelBreakdown { .. }
                | Error::WealthExhausted { .. }
        )
    }

    pub(crate) fn param(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
