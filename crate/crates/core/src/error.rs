use alloc::string::String;

/// Failures raised by the decomposition core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index {index} out of range (must be < {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("mode {mode} out of range for an order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference tensor has zero norm")]
    ZeroNorm,

    #[error("normal equations are singular even after regularization")]
    SingularSystem,

    #[error("non-finite values encountered in sweep {sweep}")]
    NumericalFailure { sweep: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

macro_rules! arg_err {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

pub(crate) use arg_err;
pub(crate) use shape_err;
