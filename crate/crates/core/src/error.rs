use alloc::string::String;

/// Failure categories shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Inconsistent shapes, hyperparameters or variant flags.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or out-of-range input data.
    #[error("data error: {0}")]
    Data(String),
    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// A metric was requested on an empty confusion matrix.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    /// An internal invariant was violated (e.g. subject leakage across folds).
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
pub(crate) use {config_err, data_err, usage_err};
