use std::fmt;

use hypervd::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A failure tagged with the stage that produced it and the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn config(module: &'static str, message: impl Into<String>) -> Self {
        Self {
            module,
            message: message.into(),
            code: EXIT_CONFIG,
        }
    }

    pub fn data(module: &'static str, message: impl Into<String>) -> Self {
        Self {
            module,
            message: message.into(),
            code: EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.module, self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Curvature(_) => EXIT_CONFIG,
        Error::Dimension(_)
        | Error::Alignment { .. }
        | Error::Format { .. }
        | Error::Data(_)
        | Error::UndefinedMetric
        | Error::Io { .. } => EXIT_DATA,
        Error::DegenerateDirection
        | Error::DegenerateAggregation(_)
        | Error::NonFiniteGradient(_)
        | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

pub trait Context<T> {
    fn ctx(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for hypervd::Result<T> {
    fn ctx(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            module,
            code: exit_code(&e),
            message: e.to_string(),
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn ctx(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(module, e.to_string()))
    }
}
