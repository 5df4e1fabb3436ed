use std::fmt;

/// Command failures, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: unreadable or invalid scenario, flags or parameters.
    Config(String),
    /// Exit code 3: a root or quadrature that could not be found.
    Numerical(String),
    /// Exit code 1: file system trouble.
    Io(String),
    /// The reader of standard output went away; exits quietly with 0.
    BrokenPipe,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
            CliError::BrokenPipe => 0,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::BrokenPipe => f.write_str("output closed"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dsgd_tails::Error> for CliError {
    fn from(e: dsgd_tails::Error) -> Self {
        use dsgd_tails::Error as E;
        match e {
            E::NoRootUnstable { .. }
            | E::NoRootLight { .. }
            | E::Quadrature { .. }
            | E::Degenerate(_) => CliError::Numerical(e.to_string()),
            E::Io(m) => CliError::Io(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return CliError::BrokenPipe;
        }
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
