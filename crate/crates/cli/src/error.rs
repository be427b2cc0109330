use thiserror::Error;

/// Process exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<normflux::Error> for CliError {
    fn from(e: normflux::Error) -> Self {
        use normflux::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::FusionMismatch(_) => CliError::Config(msg),
            E::NonFinite(_) | E::Numeric(_) | E::Tape(_) => CliError::Numeric(msg),
            E::DimensionMismatch(_)
            | E::Empty(_)
            | E::Data(_)
            | E::Checkpoint(_)
            | E::Io(_)
            | E::Csv(_)
            | E::Json(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
