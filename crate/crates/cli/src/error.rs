use std::fmt;
use std::path::Path;

/// Exit code 1: the request itself is invalid. Exit code 2: it was valid
/// but failed while running.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    /// Runtime failure while reading `path`, naming the file once.
    pub fn reading(path: &Path, e: impl fmt::Display) -> Self {
        let msg = e.to_string();
        let shown = path.display().to_string();
        if msg.contains(&shown) {
            CliError::Runtime(msg)
        } else {
            CliError::Runtime(format!("{shown}: {msg}"))
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}
