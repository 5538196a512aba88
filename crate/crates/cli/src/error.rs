use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: artifact digest {found} does not match {expected}")]
    DigestMismatch { path: PathBuf, expected: String, found: String },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Gen(#[from] pano_nav_core::scenegen::GenError),
    #[error(transparent)]
    Localizer(#[from] pano_nav_core::localizer::LocalizerError),
    #[error(transparent)]
    Eval(#[from] pano_nav_core::eval::EvalError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::DigestMismatch { .. } => "digestMismatch",
            CliError::Validation(_) => "validation",
            CliError::Gen(_) => "generation",
            CliError::Localizer(_) => "localizer",
            CliError::Eval(_) => "eval",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            message: String,
            exit: i32,
        }
        serde_json::to_string(&Record { error: self.kind(), message: self.to_string(), exit: self.exit_code() })
            .unwrap_or_else(|_| String::from("{\"error\":\"internal\"}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Validation("x".into()).exit_code(), 3);
        let r: serde_json::Value = serde_json::from_str(&CliError::Validation("bad".into()).record()).unwrap();
        assert_eq!(r["error"], "validation");
        assert_eq!(r["exit"], 3);
    }
}
