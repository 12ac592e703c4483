use std::fmt;

use crate::config::ConfigErrors;

/// Failure of a CLI command, printed as one `key=value` line.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigErrors),
    Stage {
        stage: &'static str,
        source: twofive_core::Error,
    },
    Check(String),
}

impl CliError {
    pub fn stage(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Stage { stage, .. } => stage,
            CliError::Check(_) => "check",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "invalid_config",
            CliError::Stage { source, .. } => source.kind(),
            CliError::Check(_) => "check_failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Stage { .. } | CliError::Check(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Check(m) => m.clone(),
            CliError::Config(e) => e.to_string(),
            CliError::Stage { source, .. } => source.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message().replace('\n', " ");
        write!(f, "error: stage={} kind={} msg={}", self.stage(), self.kind(), msg)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}

/// Tags a core error with the stage that produced it.
pub trait StageResult<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageResult<T> for twofive_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

impl<T> StageResult<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage {
            stage,
            source: e.into(),
        })
    }
}
