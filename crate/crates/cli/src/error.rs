use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ddimm::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("every replication failed at M = {m}, K = {k}; first error: {first}")]
    AllFailed { m: usize, k: usize, first: String },
}

impl CliError {
    /// 2 for a non-converged block, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ddimm::Error::Unconverged { .. }) => 2,
            _ => 1,
        }
    }

    /// Message for stderr, with a hint where one helps.
    pub fn report(&self) -> String {
        match self {
            CliError::Core(e @ ddimm::Error::Unconverged { .. }) => {
                format!("{e}; rerun with --allow-unconverged to combine anyway, or raise max_iter")
            }
            other => other.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
