use thiserror::Error;

/// Failures surfaced to the shell, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<mixfdr::Error> for CliError {
    fn from(e: mixfdr::Error) -> Self {
        use mixfdr::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::DegenerateColumn { .. } | E::Collinear { .. } | E::ShapeMismatch(_) => CliError::Data(msg),
            E::NotPositiveDefinite { .. } | E::Conditioning { .. } | E::UnpairedGroup(_) => CliError::Numerical(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_errors_map_to_exit_codes() {
        let code = |e: mixfdr::Error| CliError::from(e).exit_code();
        assert_eq!(code(mixfdr::Error::InvalidArgument("q".into())), 1);
        assert_eq!(code(mixfdr::Error::DegenerateColumn { column: "x1".into() }), 2);
        assert_eq!(code(mixfdr::Error::Collinear { context: "refit".into(), columns: vec![1] }), 2);
        assert_eq!(code(mixfdr::Error::Conditioning { shrinkage: 0.5 }), 3);
        assert_eq!(code(mixfdr::Error::NotPositiveDefinite { group: "x1".into() }), 3);
    }
}
