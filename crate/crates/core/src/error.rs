use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed or non-finite training/holdout data. The message names the
    /// offending cycle, row or column.
    #[error("data error: {0}")]
    Data(String),

    /// The phase-input DOFs were masked out; the belief was left untouched.
    #[error("phase unavailable: phase-input sensors are masked out")]
    PhaseUnavailable,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("model parse error at byte {offset} ({field}): {reason}")]
    Parse {
        offset: usize,
        field: &'static str,
        reason: String,
    },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
