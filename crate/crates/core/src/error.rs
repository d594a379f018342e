use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Cholesky pivot `index` was not strictly positive.
    NotSpd { index: usize },
    /// Power iteration hit its iteration cap; `estimate` is the best Rayleigh quotient.
    NoConvergence { estimate: f64 },
    /// A NaN or infinity appeared where finite values are required.
    NonFinite(&'static str),
    InvalidParams(&'static str),
    /// Time outside the supported window `[lo, hi]`.
    OutOfRange { t: f64, lo: f64, hi: f64 },
    /// Noise schedule evaluated negative at `s`.
    ScheduleNegative { s: f64 },
    SizeMismatch { left: usize, right: usize },
    TooLarge { n: usize, max: usize },
    DimensionMismatch { expected: usize, got: usize },
    /// Training loss became non-finite on interval `(k, j)`.
    Diverged { k: usize, j: usize, iteration: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotSpd { index } => write!(f, "matrix is not positive definite (pivot {index})"),
            Error::NoConvergence { estimate } => {
                write!(f, "power iteration did not converge (best estimate {estimate})")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidParams(what) => write!(f, "invalid parameters: {what}"),
            Error::OutOfRange { t, lo, hi } => write!(f, "time {t} outside [{lo}, {hi}]"),
            Error::ScheduleNegative { s } => write!(f, "noise schedule negative at s = {s}"),
            Error::SizeMismatch { left, right } => {
                write!(f, "point sets differ in size ({left} vs {right})")
            }
            Error::TooLarge { n, max } => write!(f, "problem size {n} exceeds limit {max}"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::Diverged { k, j, iteration } => {
                write!(f, "training diverged on interval ({k}, {j}) at iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for Error {}
