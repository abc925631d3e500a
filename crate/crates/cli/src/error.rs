use tbm_core::TbmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] TbmError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 1 model or statistical failure, 2 input/output or configuration,
    /// 3 solver non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e {
                TbmError::InvalidGrid(_)
                | TbmError::InvalidVolume(_)
                | TbmError::AllZeroVolume
                | TbmError::NonFiniteInput(_)
                | TbmError::GridMismatch(_)
                | TbmError::Io(_)
                | TbmError::BadMagic
                | TbmError::TruncatedFile { .. }
                | TbmError::UnsupportedEncoding(_)
                | TbmError::NotNifti1
                | TbmError::UnsupportedDatatype(_)
                | TbmError::DimensionalityOutOfRange(_)
                | TbmError::InvalidConfig(_) => 2,
                _ => 1,
            },
        }
    }
}
