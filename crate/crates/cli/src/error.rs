/// Exit statuses. 0, 1 and 4 report a classification; the rest are errors.
pub mod exit {
    pub const POSITIVE_RECURRENT: i32 = 0;
    pub const TRANSIENT: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const INCONCLUSIVE: i32 = 4;
    pub const INTERNAL: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at {}: {message}", display_path(path))]
    Parse { path: String, message: String },
    #[error("invalid {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("bad parameter path '{0}'")]
    BadParameterPath(String),
    #[error(transparent)]
    Core(#[from] netstab::Error),
    #[error("{0}")]
    Io(String),
}

fn display_path(p: &str) -> &str {
    if p.is_empty() {
        "<root>"
    } else {
        p
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => exit::PARSE,
            CliError::Invalid { .. } | CliError::BadParameterPath(_) => exit::VALIDATION,
            CliError::Core(e) if e.is_validation() => exit::VALIDATION,
            CliError::Core(_) | CliError::Io(_) => exit::INTERNAL,
        }
    }

    pub fn io(what: &str, e: std::io::Error) -> CliError {
        CliError::Io(format!("{what}: {e}"))
    }
}
