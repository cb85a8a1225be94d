//! File-backed conversation persistence: one append-only JSON-lines event
//! log per conversation.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use aquabot_core::dialogue::{DialogueTracker, Event, TrackerError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Log {
        path: String,
        #[source]
        source: TrackerError,
    },
}

/// Conversation ids double as file names, so they are restricted to a
/// conservative character set.
pub fn valid_conversation_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone)]
pub struct ConversationStore {
    dir: PathBuf,
}

impl ConversationStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(ConversationStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn append(&self, id: &str, events: &[Event]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.path(id);
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut buf = Vec::new();
        DialogueTracker::write_log(events, &mut buf).map_err(io)?;
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        f.write_all(&buf).map_err(io)?;
        f.sync_data().map_err(io)
    }

    pub fn load(&self, id: &str) -> Result<Option<DialogueTracker>, StoreError> {
        let path = self.path(id);
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(StoreError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let log = |source| StoreError::Log {
            path: path.display().to_string(),
            source,
        };
        let events = DialogueTracker::read_log(BufReader::new(file)).map_err(log)?;
        DialogueTracker::replay(id, events).map(Some).map_err(log)
    }

    /// Replay every stored log.
    pub fn load_all(&self) -> Result<BTreeMap<String, DialogueTracker>, StoreError> {
        let mut out = BTreeMap::new();
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.display().to_string(),
            source,
        })?;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(id) = name.strip_suffix(".jsonl") else {
                continue;
            };
            if !valid_conversation_id(id) {
                continue;
            }
            if let Some(t) = self.load(id)? {
                out.insert(id.to_string(), t);
            }
        }
        Ok(out)
    }
}
