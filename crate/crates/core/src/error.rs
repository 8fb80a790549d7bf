use std::fmt;
use std::path::PathBuf;

use crate::backend::BackendError;
use crate::scene::SceneError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage names used in error reports and job diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tag,
    Detect,
    Segment,
    Embed,
    Select,
    Classify,
    Cluster,
    ParseCharacter,
    Score,
    Layout,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Tag => "tag",
            Stage::Detect => "detect",
            Stage::Segment => "segment",
            Stage::Embed => "embed",
            Stage::Select => "select",
            Stage::Classify => "classify",
            Stage::Cluster => "cluster",
            Stage::ParseCharacter => "parse_character",
            Stage::Score => "score",
            Stage::Layout => "layout",
            Stage::Export => "export",
        };
        f.write_str(s)
    }
}

/// A schema violation while reading one of the JSON artifacts.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}{}: {message}", .file.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default(), .field.as_deref().map(|f| format!("field `{f}`")).unwrap_or_else(|| "document".to_string()))]
pub struct ParseError {
    pub file: Option<PathBuf>,
    /// Dotted path of the offending field, when it can be determined.
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("backend failure during {stage}: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("curation failed at {stage}: {message}")]
    Curation {
        stage: Stage,
        message: String,
        /// Last raw LLM text, kept for diagnosis.
        raw: Option<String>,
    },
    #[error("scoring: {0}")]
    Scoring(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("export: {0}")]
    Export(String),
    #[error("image {}: {message}", .path.display())]
    Image { path: PathBuf, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn backend(stage: Stage, source: BackendError) -> Self {
        Error::Backend { stage, source }
    }

    /// Stage name for errors raised inside the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Backend { stage, .. } | Error::Curation { stage, .. } => Some(*stage),
            Error::Scoring(_) => Some(Stage::Score),
            Error::Export(_) => Some(Stage::Export),
            _ => None,
        }
    }
}
