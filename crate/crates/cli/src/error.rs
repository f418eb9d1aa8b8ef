use thiserror::Error;

use lpa_core::Error as CoreError;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_PARSE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Config(_) => EXIT_PARSE,
            CliError::Core(CoreError::BudgetExceeded { .. }) => EXIT_BUDGET,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
