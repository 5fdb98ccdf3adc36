use std::io;

/// Errors produced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed binary or text input; `offset` is the byte position where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("alignment entry {index} ({word:?}): {message}")]
    Alignment {
        index: usize,
        word: String,
        message: String,
    },

    #[error("sequence length mismatch: audio has {audio} frames, text has {text} frames")]
    Length { audio: usize, text: usize },

    #[error("no embedding for utterance {utterance:?}, word index {index}")]
    Lookup { utterance: String, index: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
