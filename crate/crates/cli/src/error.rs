use std::path::Path;

use thiserror::Error;

/// Failures of the harness, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] shearstab::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for bad input, 3 for a numerical blow-up, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 2,
            CliError::Core(shearstab::Error::InvalidArgument(_)) => 2,
            CliError::Core(shearstab::Error::BlowUp { .. }) => 3,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_failure_class() {
        assert_eq!(CliError::Validation(vec!["nu must be positive".into()]).exit_code(), 2);
        let blow = CliError::Core(shearstab::Error::BlowUp { time: 1.0, k: Some(3) });
        assert_eq!(blow.exit_code(), 3);
        let io = CliError::io(Path::new("x"), std::io::Error::other("disk"));
        assert_eq!(io.exit_code(), 1);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = CliError::Parse {
            path: "c.toml".into(),
            line: Some(4),
            message: "expected a value".into(),
        };
        assert_eq!(e.to_string(), "c.toml:4: expected a value");
    }
}
