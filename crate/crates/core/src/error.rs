use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error(transparent)]
    Tensor(#[from] tensorkit::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        LabError::Parse { offset, message: message.into() }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Parse { .. } | LabError::Data(_) | LabError::Io(_) | LabError::Json(_) => 3,
            LabError::Numeric(_) | LabError::Shape(_) | LabError::Tensor(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
