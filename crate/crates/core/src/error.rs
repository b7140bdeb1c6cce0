use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite or non-positive input in {0}")]
    NonFiniteInput(&'static str),
    #[error("{context} did not converge after {iterations} iterations (deviation {deviation:e})")]
    NonConvergence {
        context: &'static str,
        iterations: usize,
        deviation: f64,
    },
    #[error("singular linear system in tangent projection (alignment too close to the polytope boundary)")]
    SingularSystem,
    #[error("retraction overflow: step too large (max exponent {0:e})")]
    Overflow(f64),
    #[error("line search failed: step fell below {min_step:e}")]
    LineSearchFailure { min_step: f64 },
    #[error("entropic kernel underflow (epsilon {0:e} too small)")]
    NumericalUnderflow(f64),
    #[error("dictionary has no usable entries")]
    EmptyDictionary,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by numerics rather than malformed data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::SingularSystem
                | Error::Overflow(_)
                | Error::LineSearchFailure { .. }
                | Error::NumericalUnderflow(_)
        )
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
