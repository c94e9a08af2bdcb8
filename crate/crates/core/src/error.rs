use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a mono file, found {channels} channels")]
    ChannelCount { channels: u16 },

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("corrupt audio file: {0}")]
    CorruptFile(String),

    #[error("clip contains no sample above the silence threshold")]
    SilentClip,

    #[error("row {row}: unknown emotion label {label:?}")]
    Label { row: usize, label: String },

    #[error("row {row}: duplicate recording for performer {performer:?} / {emotion}")]
    Duplicate {
        row: usize,
        performer: String,
        emotion: String,
    },

    #[error("input too short: need {needed} samples, have {available}")]
    InputTooShort { needed: usize, available: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least 3 onsets to estimate tempo, found {found}")]
    InsufficientOnsets { found: usize },

    #[error("feature {0} is undefined for this recording (empty track)")]
    FeatureUndefined(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate groups: within-group variance is zero")]
    DegenerateGroups,

    #[error("class {0} has no training rows")]
    MissingClass(String),

    #[error("feature subset error: {0}")]
    Subset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly name of the error kind, used in CLI failure reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ChannelCount { .. } => "ChannelCountError",
            Error::Format(_) => "FormatError",
            Error::CorruptFile(_) => "CorruptFileError",
            Error::SilentClip => "SilentClipError",
            Error::Label { .. } => "LabelError",
            Error::Duplicate { .. } => "DuplicateError",
            Error::InputTooShort { .. } => "InputTooShortError",
            Error::Config(_) => "ConfigError",
            Error::Domain(_) => "DomainError",
            Error::InsufficientOnsets { .. } => "InsufficientOnsetsError",
            Error::FeatureUndefined(_) => "FeatureUndefinedError",
            Error::Schema(_) => "SchemaError",
            Error::InsufficientData(_) => "InsufficientDataError",
            Error::DegenerateGroups => "DegenerateGroupsError",
            Error::MissingClass(_) => "MissingClassError",
            Error::Subset(_) => "SubsetError",
            Error::Io { .. } => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}
