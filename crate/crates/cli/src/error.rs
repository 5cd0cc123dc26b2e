use std::path::PathBuf;

use choreo_autograd::TensorError;
use choreo_core::CoreError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    /// A stage was run before the checkpoint it depends on exists.
    #[error("stage order: `{stage}` needs {missing} (run `{run}` first)")]
    StageOrder {
        stage: &'static str,
        missing: PathBuf,
        run: &'static str,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::StageOrder { .. } => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                CoreError::Config(_) => EXIT_CONFIG,
                CoreError::Numerical(_) => EXIT_NUMERICAL,
                CoreError::Tensor(TensorError::NonFiniteGradient { .. }) => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
