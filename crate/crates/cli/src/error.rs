use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] voxfuse::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use voxfuse::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::InvalidArgument(_) => 2,
                E::NonFinite(_) | E::Numeric(_) | E::Shape(_) => 4,
                E::DegenerateBox(_) | E::Data(_) | E::Io(_) | E::Json(_) => 3,
            },
        }
    }
}
