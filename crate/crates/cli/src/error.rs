use std::fmt;

use thiserror::Error;

/// What went wrong, coarse enough to map onto a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    MissingPrerequisite,
    Elicitation,
    Degenerate,
    Other,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Other => 1,
            FailureKind::Config => 2,
            FailureKind::MissingPrerequisite => 3,
            FailureKind::Elicitation => 4,
            FailureKind::Degenerate => 5,
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Config => "config error",
            FailureKind::MissingPrerequisite => "missing prerequisite",
            FailureKind::Elicitation => "elicitation failed",
            FailureKind::Degenerate => "analysis degenerate",
            FailureKind::Other => "error",
        })
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {kind}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &'static str, kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::Config, message)
    }

    pub fn missing(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::MissingPrerequisite, message)
    }

    pub fn degenerate(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::Degenerate, message)
    }

    pub fn other(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::Other, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
