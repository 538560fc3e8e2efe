//! Uploaded submissions.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::archive::{inspect_zip, ArchiveEntry, ArchiveError};
use crate::digest::sha256_hex;
use crate::task::Task;

/// Entry point every archive must carry at its root.
pub const ENTRY_FILE: &str = "main.py";
/// Cap on archive size, compressed and uncompressed alike.
pub const DEFAULT_ARCHIVE_CAP: u64 = 256 * 1024 * 1024;
pub const MAX_AUTHOR_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionStatus {
    Pending,
    Running,
    /// Every run reached a terminal state (not necessarily success).
    Completed,
    /// The platform could not process the submission at all.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: String,
    pub task: Task,
    pub author: String,
    pub archive_checksum: String,
    pub archive_bytes: u64,
    pub entry_file: String,
    pub manifest: Vec<ArchiveEntry>,
    pub submitted_at: DateTime<Utc>,
    pub status: SubmissionStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum SubmissionError {
    #[error("archive has no `{ENTRY_FILE}` at its root")]
    MissingEntryFile,
    #[error("archive exceeds the {limit}-byte limit")]
    ArchiveTooLarge { limit: u64 },
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("author must be 1..={MAX_AUTHOR_LEN} printable characters")]
    InvalidAuthor,
    #[error("submission `{0}` not found")]
    NotFound(String),
    #[error("submission `{id}` is {status:?}; cannot {action}")]
    InvalidState {
        id: String,
        status: SubmissionStatus,
        action: &'static str,
    },
    #[error("no datasets registered for task `{0}`")]
    NoDatasetsForTask(Task),
}

impl From<ArchiveError> for SubmissionError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::TooLarge { limit } => SubmissionError::ArchiveTooLarge { limit },
            ArchiveError::Malformed(m) => SubmissionError::MalformedArchive(m),
            ArchiveError::Io(io) => SubmissionError::MalformedArchive(io.to_string()),
        }
    }
}

pub fn new_submission_id() -> String {
    format!("sub-{}", uuid::Uuid::new_v4().simple())
}

pub fn is_valid_submission_id(id: &str) -> bool {
    id.strip_prefix("sub-")
        .is_some_and(|hex| hex.len() == 32 && hex.bytes().all(|b| b.is_ascii_hexdigit()))
}

/// Checks an uploaded archive and builds the pending submission record.
pub fn validate_submission(
    archive: &[u8],
    task: Task,
    author: &str,
    size_cap: u64,
) -> Result<Submission, SubmissionError> {
    let author = author.trim();
    if author.is_empty() || author.chars().count() > MAX_AUTHOR_LEN || author.chars().any(char::is_control) {
        return Err(SubmissionError::InvalidAuthor);
    }
    if archive.len() as u64 > size_cap {
        return Err(SubmissionError::ArchiveTooLarge { limit: size_cap });
    }
    let manifest = inspect_zip(archive, size_cap)?;
    if !manifest.iter().any(|e| e.path == ENTRY_FILE) {
        return Err(SubmissionError::MissingEntryFile);
    }
    Ok(Submission {
        submission_id: new_submission_id(),
        task,
        author: author.to_string(),
        archive_checksum: sha256_hex(archive),
        archive_bytes: archive.len() as u64,
        entry_file: ENTRY_FILE.to_string(),
        manifest,
        submitted_at: Utc::now(),
        status: SubmissionStatus::Pending,
    })
}
