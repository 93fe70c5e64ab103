use std::fmt;

use setloss::Error;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Data = 2,
    /// NaN during training or a failed gradient check.
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { exit: Exit::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { exit: Exit::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { exit: Exit::Numeric, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::InvalidArgument(_) => Exit::Usage,
            Error::NonFinite { .. } | Error::EmptyReduction { .. } | Error::NonScalarRoot { .. } => Exit::Numeric,
            Error::Shape { .. }
            | Error::DummySpaceExhausted { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Io(_) => Exit::Data,
        };
        Self { exit, message: e.to_string() }
    }
}
