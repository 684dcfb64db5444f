use std::fmt;

/// Usage errors exit 2, data errors exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data { name: &'static str, message: String },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn data(name: &'static str, message: impl Into<String>) -> Self {
        CliError::Data {
            name,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data { name, message } => write!(f, "{name}: {message}"),
        }
    }
}

impl From<kare_core::Error> for CliError {
    fn from(e: kare_core::Error) -> Self {
        CliError::data(e.name(), e.to_string())
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                kare_core::Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    kare_core::FormatError,
    kare_core::DdpoError,
    kare_core::corpus::CorpusError,
    kare_core::eval::EvalError,
    kare_core::diff::DiffError,
    kare_core::prompts::PromptError,
    serde_json::Error,
    std::io::Error
);

/// Attaches the offending path to I/O errors.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::data("Io", format!("{}: {e}", path.display()))
}
