use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(raxn::Error),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] raxn::Error),
}

impl CliError {
    pub fn io(context: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.to_string(),
            source,
        }
    }

    /// 2 usage, 3 config, 4 data, 5 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use raxn::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) | CliError::Io { .. } => 4,
            CliError::Numeric(_) => 5,
            CliError::Core(e) => match e {
                E::Config(_)
                | E::InvalidArgument(_)
                | E::InvalidShape { .. }
                | E::ShapeMismatch { .. }
                | E::InvalidGeometry(_)
                | E::InvalidSpec(_) => 3,
                E::Format { .. } | E::Io(_) | E::EmptyDataset | E::LabelOutOfRange { .. } | E::CheckpointKeys { .. } => 4,
                E::Diverged { .. } => 5,
                E::State(_) | E::UnknownParam(_) => 1,
            },
        }
    }
}
