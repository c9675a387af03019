use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },

    /// A delimited-text problem; `line` and `column` are 1-based.
    #[error("line {line}, column {column}: {message}")]
    Table {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("newick: {message} at offset {offset}")]
    Newick { offset: usize, message: String },

    #[error("taxonomy line {line}: {message}")]
    Taxonomy { line: usize, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("duplicate {kind} identifier(s): {}", ids.join(", "))]
    Duplicate { kind: &'static str, ids: Vec<String> },

    #[error("{kind} missing: {}", ids.join(", "))]
    Missing { kind: &'static str, ids: Vec<String> },

    #[error("unknown taxon `{0}`")]
    UnknownTaxon(String),

    #[error("taxon `{reference}` is ambiguous ({matches} matching nodes)")]
    AmbiguousTaxon { reference: String, matches: usize },

    #[error("rank-deficient design: column(s) {} are collinear with earlier columns", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("degenerate distance matrix: {0}")]
    Degenerate(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn table(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Table {
            line,
            column,
            message: msg.into(),
        }
    }
}

/// Decode `bytes` as UTF-8, reporting the first invalid byte offset.
pub fn decode_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Utf8 {
        offset: e.valid_up_to(),
    })
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
