use sixchan_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Shape(m) => Error::Dimension(m),
        }
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Maps a JSON parse failure onto a byte offset within `text`.
    pub fn json(text: &str, err: serde_json::Error) -> Self {
        Error::Format {
            offset: byte_offset(text, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
