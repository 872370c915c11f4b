use std::fmt;

/// Exit code for bad input: unreadable files, schema or data errors.
pub const EXIT_INPUT: i32 = 1;
/// Exit code for numerical non-convergence or oracle disagreement.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    /// Prefixes the message with `context: `.
    pub fn context(self, context: impl fmt::Display) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{context}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{context}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lmisysid::Error> for CliError {
    fn from(e: lmisysid::Error) -> Self {
        match e {
            lmisysid::Error::Solver(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
