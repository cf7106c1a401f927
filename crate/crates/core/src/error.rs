use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A value that should be finite or well-formed was not.
    #[error("invalid input: {0}")]
    Input(String),
    /// A value fell outside its permitted range.
    #[error("out of range: {0}")]
    Range(String),
    /// The data set cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("configuration error: {0}")]
    Config(String),
}

macro_rules! err {
    ($kind:ident, $($arg:tt)*) => {
        $crate::Error::$kind(alloc::format!($($arg)*))
    };
}
pub(crate) use err;
