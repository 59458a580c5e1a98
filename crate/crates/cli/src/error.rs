use std::fmt;

/// Failure of a subcommand, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files. Exit code 2.
    Input(String),
    /// Truth and prediction sets do not match up. Exit code 3.
    Pairing(Vec<String>),
    /// A result violated an invariant the library guarantees. Exit code 4.
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pairing(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// Wraps a library error with the file or item it concerns.
    pub fn context(what: impl fmt::Display, err: ffcount::Error) -> Self {
        match CliError::from(err) {
            CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{what}: {m}")),
            other => other,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Pairing(orphans) => {
                write!(f, "{} file(s) without a counterpart:", orphans.len())?;
                for o in orphans {
                    write!(f, "\n  {o}")?;
                }
                Ok(())
            }
            CliError::Internal(m) => write!(f, "internal invariant violated: {m}"),
        }
    }
}

impl From<ffcount::Error> for CliError {
    fn from(err: ffcount::Error) -> Self {
        use ffcount::Error as E;
        match err {
            E::NotScalar(_) | E::NoNeighbors(_) | E::UndefinedPeak => CliError::Internal(err.to_string()),
            _ => CliError::Input(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Input(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Internal(format!("serializing output: {err}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::input("x").code(), 2);
        assert_eq!(CliError::Pairing(vec![]).code(), 3);
        assert_eq!(CliError::Internal("x".into()).code(), 4);
        assert_eq!(CliError::from(ffcount::Error::MissingBoxes).code(), 2);
        assert_eq!(CliError::from(ffcount::Error::NotScalar(vec![2])).code(), 4);
    }

    #[test]
    fn pairing_lists_orphans() {
        let msg = CliError::Pairing(vec!["pred-only: b.ffdm".into()]).to_string();
        assert!(msg.contains("b.ffdm"));
    }
}
