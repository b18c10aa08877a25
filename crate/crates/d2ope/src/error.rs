use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] d2ope_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Output(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    ///
    /// 2 usage, 3 model or ergodicity, 4 data, 5 cross-fitting, 6 support.
    pub fn exit_code(&self) -> i32 {
        use d2ope_core::Error as C;
        match self {
            Error::Usage(_) => 2,
            Error::Core(C::InvalidArgument(_)) => 2,
            Error::Core(C::NotErgodic(_)) | Error::Core(C::Numerical(_)) => 3,
            Error::Core(C::OffGrid { .. }) => 4,
            Error::Core(C::CrossFitting(_)) => 5,
            Error::Core(C::Coverage { .. }) => 6,
            Error::Io { .. } | Error::Parse { .. } | Error::Output(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_per_family() {
        let cases = [
            (Error::usage("x"), 2),
            (Error::Core(d2ope_core::Error::NotErgodic("x".into())), 3),
            (Error::Parse { line: 3, message: "x".into() }, 4),
            (Error::Core(d2ope_core::Error::CrossFitting("x".into())), 5),
            (
                Error::Core(d2ope_core::Error::Coverage {
                    state: 0,
                    action: 0,
                    detail: "x".into(),
                }),
                6,
            ),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code, "{err}");
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = Error::Parse {
            line: 12,
            message: "bad state".into(),
        };
        assert_eq!(e.to_string(), "line 12: bad state");
    }
}
