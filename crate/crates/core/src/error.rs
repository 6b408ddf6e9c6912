use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} lies outside the mean range [{lo}, {hi}] of the {family} model")]
    Domain {
        family: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("integrand is not integrable: {0}")]
    NonIntegrable(String),
    #[error("quadrature did not converge after {subdivisions} subdivisions (error estimate {error:e})")]
    QuadratureNonConvergence { subdivisions: usize, error: f64 },
    #[error("density is singular: {0}")]
    Singular(String),
    #[error("improper posterior: {0}")]
    Propriety(String),
    #[error("REML optimization did not converge after {0} iterations")]
    RemlNonConvergence(usize),
    #[error("design enumeration would produce {0} samples (limit 1000000)")]
    EnumerationTooLarge(u128),
    #[error("selection probability must be positive (draw {0})")]
    ZeroProbability(usize),
    #[error("need at least {needed} successful replicates, got {got}")]
    TooFewReplicates { needed: usize, got: usize },
    #[error("{failed} of {total} replicates failed, above the {limit} exclusion limit")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
