use std::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Translator,
    Fakes,
    Concat,
    Train,
    Test,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Translator => "translator",
            Stage::Fakes => "fakes",
            Stage::Concat => "concat",
            Stage::Train => "train",
            Stage::Test => "test",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: sixchan_core::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(what: impl Into<String>, source: serde_json::Error) -> Self {
        HarnessError::Json { what: what.into(), source }
    }

    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }

    /// Stage to blame on standard error.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Stage { stage, .. } => Some(*stage),
            HarnessError::Config(_) => None,
            _ => Some(Stage::Report),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Attaches a stage label to core errors.
pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageContext<T> for sixchan_core::Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|source| match source {
            sixchan_core::Error::Config(m) => HarnessError::Config(m),
            source => HarnessError::Stage { stage, source },
        })
    }
}
