//! Error type shared across the engine.

/// Errors produced by the scheduling engine and its tooling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A candidate slot set came out empty (zero slots partitioned, or an
    /// empty activity map handed to a policy).
    #[error("empty candidate set: {0}")]
    EmptyCandidates(String),

    /// Signal assembly had no effective weight mass (every `weight * activity`
    /// product was zero); callers are expected to fall back to a uniform map.
    #[error("degenerate assembly: effective weight sum is zero")]
    DegenerateAssembly,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// Efficiency ratio requested with an execution volume of zero.
    #[error("undefined ratio: execution volume is zero")]
    UndefinedRatio,

    /// A store publish was rejected; the previously published version is intact.
    #[error("publish rejected: {0}")]
    PublishRejected(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable code, used on the CLI's stderr error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptyCandidates(_) => "empty-candidates",
            Error::DegenerateAssembly => "degenerate-assembly",
            Error::NotFound(_) => "not-found",
            Error::Configuration(_) => "configuration",
            Error::UndefinedRatio => "undefined-ratio",
            Error::PublishRejected(_) => "publish-rejected",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
