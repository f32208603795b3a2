use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    #[error("{0}")]
    Config(String),
    /// A verification check failed.
    #[error("verification failed: {0}")]
    Verification(String),
    /// The simulator stopped making progress.
    #[error("{0}")]
    Watchdog(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Watchdog(_) => 3,
        }
    }
}

impl From<hetero_noc::sim::SimError> for CliError {
    fn from(e: hetero_noc::sim::SimError) -> Self {
        match e {
            hetero_noc::sim::SimError::Watchdog { .. } => CliError::Watchdog(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<hetero_noc::techmodel::TechError> for CliError {
    fn from(e: hetero_noc::techmodel::TechError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<hetero_noc::routing::RoutingError> for CliError {
    fn from(e: hetero_noc::routing::RoutingError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<hetero_noc::perfmodel::ModelError> for CliError {
    fn from(e: hetero_noc::perfmodel::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}
