use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value at `{key}`: {reason}")]
    InvalidSpec { key: String, reason: String },

    #[error("zero denominator in {what} at period {period}")]
    ZeroDenominator { what: &'static str, period: usize },

    #[error("bisection does not bracket a root in {what} at period {period}")]
    NoBracket { what: &'static str, period: usize },

    #[error("non-finite value in {what} at period {period}")]
    NonFinite { what: &'static str, period: usize },

    #[error("technology kind mismatch: {0}")]
    WrongTechnology(String),

    #[error("restriction set not valid: {0}")]
    Restrictions(String),

    #[error("identification assumption 1(e) violated in sample: {0}")]
    DegenerateCovariance(String),

    #[error("rank-deficient design in {0}")]
    RankDeficient(String),

    #[error("mixture fit failed: {0}")]
    Mixture(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that come from bad user input rather than numerics or IO.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec { .. }
                | Error::Restrictions(_)
                | Error::TomlDe(_)
                | Error::WrongTechnology(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }
}
