//! Training-data formats: NLU examples, stories and the domain file.
//!
//! All three are markdown-flavoured, line-oriented UTF-8 files. LF and CRLF
//! line endings are both accepted.

mod domain;
mod nlu;
mod story;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};

pub use domain::{parse_domain, serialize_domain, DomainSpec, TemplateKey, DEFAULT_FALLBACK, DEFAULT_LISTEN};
pub use nlu::{parse_nlu_markdown, serialize_nlu_markdown, EntitySpan, IntentExample};
pub use story::{parse_stories_markdown, serialize_stories, serialize_story, Step, Story};
pub use validate::validate_corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorpusErrorKind {
    Syntax,
    UnknownLabel,
    OverlapSpan,
    EmptySection,
    /// Not fatal; reported by [`validate_corpus`] only.
    Warning,
}

impl fmt::Display for CorpusErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CorpusErrorKind::Syntax => "syntax",
            CorpusErrorKind::UnknownLabel => "unknown label",
            CorpusErrorKind::OverlapSpan => "overlapping span",
            CorpusErrorKind::EmptySection => "empty section",
            CorpusErrorKind::Warning => "warning",
        };
        f.write_str(s)
    }
}

/// A located problem in a corpus file. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, thiserror::Error)]
#[error("{}:{line}: {kind}: {message}", file.display())]
pub struct CorpusError {
    pub file: PathBuf,
    pub line: usize,
    pub kind: CorpusErrorKind,
    pub message: String,
}

impl CorpusError {
    pub(crate) fn new(kind: CorpusErrorKind, line: usize, message: impl Into<String>) -> Self {
        CorpusError {
            file: PathBuf::from("<input>"),
            line: line.max(1),
            kind,
            message: message.into(),
        }
    }

    pub fn is_warning(&self) -> bool {
        self.kind == CorpusErrorKind::Warning
    }

    /// Re-attribute the error to a concrete file.
    pub fn in_file(mut self, file: impl AsRef<Path>) -> Self {
        self.file = file.as_ref().to_path_buf();
        self
    }
}

/// Split source into `(1-based line number, line)` with CR stripped.
pub(crate) fn lines(source: &str) -> impl Iterator<Item = (usize, &str)> {
    source
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Read and parse a file, attributing errors to its path.
pub fn load_file<T>(
    path: impl AsRef<Path>,
    parse: impl FnOnce(&str) -> Result<T, CorpusError>,
) -> Result<T, CorpusError> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path)
        .map_err(|e| CorpusError::new(CorpusErrorKind::Syntax, 1, format!("cannot read file: {e}")).in_file(path))?;
    parse(&source).map_err(|e| e.in_file(path))
}
