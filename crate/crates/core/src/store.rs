//! File-backed record store and content-addressed archive blobs.
//!
//! Layout under the store root:
//!
//! ```text
//! store/<kind>/<key>.json     one file per record, replaced atomically
//! store/journal.json          pending multi-record transaction, if any
//! archives/<sha256>.zip       submission archives keyed by content hash
//! ```
//!
//! Single-record writes go through [`write_atomic`]. A multi-record
//! transaction is first written to the journal, then applied record by
//! record, then the journal is removed. [`Store::open`] replays a journal
//! left behind by a crash, so every record ends up either old or new.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::{is_sha256_hex, sha256_hex, write_atomic};
use crate::runner::RunStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Dataset,
    Submission,
    Run,
    Result,
}

impl RecordKind {
    fn dir_name(self) -> &'static str {
        match self {
            RecordKind::Dataset => "datasets",
            RecordKind::Submission => "submissions",
            RecordKind::Run => "runs",
            RecordKind::Result => "results",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{kind:?} record `{key}` not found")]
    NotFound { kind: RecordKind, key: String },
    #[error("{kind:?} record `{key}` is terminal and cannot be modified")]
    ImmutableRecord { kind: RecordKind, key: String },
    #[error("invalid record key `{0}`")]
    InvalidKey(String),
    #[error("archive {0} failed its integrity check")]
    CorruptArchive(String),
    #[error("record encoding: {0}")]
    Encoding(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A record together with its last modification time.
#[derive(Debug, Clone)]
pub struct StoreRecord {
    pub kind: RecordKind,
    pub key: String,
    pub value: Vec<u8>,
    pub updated_at: SystemTime,
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    kind: RecordKind,
    key: String,
    value_hex: String,
}

pub struct Store {
    records: PathBuf,
    archives: PathBuf,
    lock: RwLock<()>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 200
        && !key.starts_with('.')
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

impl Store {
    /// Opens (creating if needed) the store rooted at `root` and replays
    /// any interrupted transaction.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref();
        let store = Store {
            records: root.join("store"),
            archives: root.join("archives"),
            lock: RwLock::new(()),
        };
        fs::create_dir_all(&store.records)?;
        fs::create_dir_all(&store.archives)?;
        store.replay_journal()?;
        Ok(store)
    }

    fn journal_path(&self) -> PathBuf {
        self.records.join("journal.json")
    }

    fn record_path(&self, kind: RecordKind, key: &str) -> Result<PathBuf, StoreError> {
        if !valid_key(key) {
            return Err(StoreError::InvalidKey(key.to_string()));
        }
        Ok(self.records.join(kind.dir_name()).join(format!("{key}.json")))
    }

    fn replay_journal(&self) -> Result<(), StoreError> {
        let path = self.journal_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let entries: Vec<JournalEntry> = serde_json::from_slice(&bytes)?;
        tracing::info!(records = entries.len(), "replaying store journal");
        for entry in entries {
            let value = hex::decode(&entry.value_hex)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            write_atomic(&self.record_path(entry.kind, &entry.key)?, &value)?;
        }
        fs::remove_file(path)?;
        Ok(())
    }

    /// Terminal runs are sealed: once a run reaches a terminal status its
    /// record can no longer be replaced.
    fn check_mutable(&self, kind: RecordKind, key: &str, path: &Path) -> Result<(), StoreError> {
        if kind != RecordKind::Run {
            return Ok(());
        }
        #[derive(Deserialize)]
        struct StatusOnly {
            status: RunStatus,
        }
        match fs::read(path) {
            Ok(bytes) => {
                let current: StatusOnly = serde_json::from_slice(&bytes)?;
                if current.status.is_terminal() {
                    return Err(StoreError::ImmutableRecord {
                        kind,
                        key: key.to_string(),
                    });
                }
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, kind: RecordKind, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let path = self.record_path(kind, key)?;
        let _guard = self.lock.write();
        self.check_mutable(kind, key, &path)?;
        write_atomic(&path, value)?;
        Ok(())
    }

    /// Applies several writes as one unit. Either all of them become
    /// visible after a crash and restart, or none do.
    pub fn transaction(&self, writes: &[(RecordKind, &str, Vec<u8>)]) -> Result<(), StoreError> {
        let paths = writes
            .iter()
            .map(|(kind, key, _)| self.record_path(*kind, key))
            .collect::<Result<Vec<_>, _>>()?;
        let _guard = self.lock.write();
        for ((kind, key, _), path) in writes.iter().zip(&paths) {
            self.check_mutable(*kind, key, path)?;
        }
        let journal: Vec<JournalEntry> = writes
            .iter()
            .map(|(kind, key, value)| JournalEntry {
                kind: *kind,
                key: key.to_string(),
                value_hex: hex::encode(value),
            })
            .collect();
        write_atomic(&self.journal_path(), &serde_json::to_vec(&journal)?)?;
        for ((_, _, value), path) in writes.iter().zip(&paths) {
            write_atomic(path, value)?;
        }
        fs::remove_file(self.journal_path())?;
        Ok(())
    }

    pub fn get(&self, kind: RecordKind, key: &str) -> Result<Vec<u8>, StoreError> {
        Ok(self.record(kind, key)?.value)
    }

    pub fn record(&self, kind: RecordKind, key: &str) -> Result<StoreRecord, StoreError> {
        let path = self.record_path(kind, key)?;
        let _guard = self.lock.read();
        let not_found = || StoreError::NotFound {
            kind,
            key: key.to_string(),
        };
        let value = match fs::read(&path) {
            Ok(v) => v,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(not_found()),
            Err(e) => return Err(e.into()),
        };
        let updated_at = fs::metadata(&path)?.modified()?;
        Ok(StoreRecord {
            kind,
            key: key.to_string(),
            value,
            updated_at,
        })
    }

    pub fn contains(&self, kind: RecordKind, key: &str) -> bool {
        self.record_path(kind, key).map(|p| p.exists()).unwrap_or(false)
    }

    /// All records of `kind`, sorted by key.
    pub fn list(&self, kind: RecordKind) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let dir = self.records.join(kind.dir_name());
        let _guard = self.lock.read();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(key) = name.strip_suffix(".json") else {
                continue;
            };
            if !valid_key(key) {
                continue;
            }
            out.push((key.to_string(), fs::read(entry.path())?));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn put_json<T: Serialize>(&self, kind: RecordKind, key: &str, value: &T) -> Result<(), StoreError> {
        self.put(kind, key, &serde_json::to_vec_pretty(value)?)
    }

    pub fn get_json<T: DeserializeOwned>(&self, kind: RecordKind, key: &str) -> Result<T, StoreError> {
        Ok(serde_json::from_slice(&self.get(kind, key)?)?)
    }

    pub fn list_json<T: DeserializeOwned>(&self, kind: RecordKind) -> Result<Vec<T>, StoreError> {
        self.list(kind)?
            .into_iter()
            .map(|(_, bytes)| serde_json::from_slice(&bytes).map_err(StoreError::from))
            .collect()
    }

    /// Records matching `filter`, in key order.
    pub fn list_filtered<T: DeserializeOwned>(
        &self,
        kind: RecordKind,
        filter: impl Fn(&T) -> bool,
    ) -> Result<Vec<T>, StoreError> {
        Ok(self.list_json(kind)?.into_iter().filter(|v| filter(v)).collect())
    }

    fn archive_path(&self, checksum: &str) -> PathBuf {
        self.archives.join(format!("{checksum}.zip"))
    }

    /// Stores archive bytes under their SHA-256 and returns the checksum.
    /// Identical archives share one blob.
    pub fn put_archive(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let checksum = sha256_hex(bytes);
        let path = self.archive_path(&checksum);
        let _guard = self.lock.write();
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(checksum)
    }

    /// Reads an archive back, verifying it still hashes to `checksum`.
    pub fn get_archive(&self, checksum: &str) -> Result<Vec<u8>, StoreError> {
        if !is_sha256_hex(checksum) {
            return Err(StoreError::InvalidKey(checksum.to_string()));
        }
        let _guard = self.lock.read();
        let bytes = match fs::read(self.archive_path(checksum)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::CorruptArchive(checksum.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if sha256_hex(&bytes) != checksum {
            return Err(StoreError::CorruptArchive(checksum.to_string()));
        }
        Ok(bytes)
    }
}
