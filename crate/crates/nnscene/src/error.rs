use std::io;

/// Errors of the std front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] nnscene_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{format} parse error at byte {offset}: {message}")]
    Parse {
        format: &'static str,
        offset: u64,
        message: String,
    },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Budget(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_config() => 2,
            Error::Usage(_) | Error::Budget(_) => 2,
            _ => 1,
        }
    }
}
