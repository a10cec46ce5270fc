use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, ranks, modes or option values.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The input lies outside the operation's domain, e.g. a non-stationary
    /// model handed to the simulator.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank-deficient design (condition number {condition:.3e}): {message}")]
    RankDeficient { condition: f64, message: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("selection failed: {0}")]
    Selection(String),

    /// Malformed input data (CSV contents, config values).
    #[error("data error: {0}")]
    Data(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Data(_)
            | Error::Domain(_)
            | Error::ModelFile(_)
            | Error::Checksum(_)
            | Error::Version { .. }
            | Error::Io(_) => 3,
            Error::Numerical(_)
            | Error::RankDeficient { .. }
            | Error::Generation(_)
            | Error::Selection(_)
            | Error::Experiment(_) => 4,
        }
    }
}
