use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Any failure while reading an input file counts as an I/O failure.
    pub fn input(path: &std::path::Path) -> impl FnOnce(omm_core::Error) -> CliError + '_ {
        move |e| CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<omm_core::Error> for CliError {
    fn from(e: omm_core::Error) -> Self {
        use omm_core::Error as E;
        match e {
            E::Contract(_) => CliError::Config(e.to_string()),
            E::Undefined(_) | E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Io { .. } | E::Json { .. } | E::Csv(_) => CliError::Io(e.to_string()),
        }
    }
}
