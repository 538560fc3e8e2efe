//! Zip reading and writing.

use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("archive exceeds {limit} bytes")]
    TooLarge { limit: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<zip::result::ZipError> for ArchiveError {
    fn from(e: zip::result::ZipError) -> Self {
        match e {
            zip::result::ZipError::Io(io) => ArchiveError::Io(io),
            other => ArchiveError::Malformed(other.to_string()),
        }
    }
}

/// Builds a zip whose bytes depend only on `files`: entries are stored
/// uncompressed, in the given order, with a fixed timestamp.
pub fn write_deterministic_zip<N: AsRef<str>>(files: &[(N, Vec<u8>)]) -> Result<Vec<u8>, ArchiveError> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    for (name, bytes) in files {
        zip.start_file(name.as_ref(), options)?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish()?.into_inner())
}

/// One file inside an uploaded archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub path: String,
    pub size: u64,
}

/// Lists the regular files of `bytes`, rejecting anything that could escape
/// an extraction directory or exceed `max_uncompressed` in total.
pub fn inspect_zip(bytes: &[u8], max_uncompressed: u64) -> Result<Vec<ArchiveEntry>, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))?;
    let mut entries = Vec::new();
    let mut total: u64 = 0;
    for i in 0..zip.len() {
        let file = zip.by_index(i)?;
        if file.is_symlink() {
            return Err(ArchiveError::Malformed(format!(
                "symbolic link `{}` is not allowed",
                file.name()
            )));
        }
        let Some(path) = file.enclosed_name() else {
            return Err(ArchiveError::Malformed(format!(
                "entry `{}` escapes the archive root",
                file.name()
            )));
        };
        total = total.saturating_add(file.size());
        if total > max_uncompressed {
            return Err(ArchiveError::TooLarge {
                limit: max_uncompressed,
            });
        }
        if file.is_dir() {
            continue;
        }
        entries.push(ArchiveEntry {
            path: path.to_string_lossy().replace('\\', "/"),
            size: file.size(),
        });
    }
    // Reading every entry catches truncated or corrupt data early.
    for i in 0..zip.len() {
        let mut file = zip.by_index(i)?;
        io::copy(&mut file, &mut io::sink())
            .map_err(|e| ArchiveError::Malformed(format!("entry `{}`: {e}", file.name())))?;
    }
    Ok(entries)
}

/// Extracts regular files of an archive already accepted by [`inspect_zip`].
pub fn extract_zip(bytes: &[u8], dest: &Path, max_uncompressed: u64) -> Result<Vec<PathBuf>, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))?;
    let mut written = Vec::new();
    let mut budget = max_uncompressed;
    for i in 0..zip.len() {
        let mut file = zip.by_index(i)?;
        let rel = file
            .enclosed_name()
            .filter(|_| !file.is_symlink())
            .ok_or_else(|| ArchiveError::Malformed(format!("unsafe entry `{}`", file.name())))?;
        let out = dest.join(rel);
        if file.is_dir() {
            fs::create_dir_all(&out)?;
            continue;
        }
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut sink = fs::File::create(&out)?;
        let copied = io::copy(&mut (&mut file).take(budget + 1), &mut sink)?;
        if copied > budget {
            return Err(ArchiveError::TooLarge {
                limit: max_uncompressed,
            });
        }
        budget -= copied;
        written.push(out);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_output() {
        let files = vec![("a.txt", b"hello".to_vec()), ("dir/b.txt", b"x".to_vec())];
        let one = write_deterministic_zip(&files).unwrap();
        let two = write_deterministic_zip(&files).unwrap();
        assert_eq!(one, two);
        let entries = inspect_zip(&one, 1 << 20).unwrap();
        assert_eq!(entries[0], ArchiveEntry { path: "a.txt".into(), size: 5 });
        assert_eq!(entries[1].path, "dir/b.txt");
    }

    #[test]
    fn rejects_truncated_and_traversal() {
        let good = write_deterministic_zip(&[("main.py", b"print(1)".to_vec())]).unwrap();
        assert!(matches!(
            inspect_zip(&good[..good.len() / 2], 1 << 20),
            Err(ArchiveError::Malformed(_))
        ));
        assert!(matches!(inspect_zip(b"not a zip", 1 << 20), Err(ArchiveError::Malformed(_))));
        let evil = write_deterministic_zip(&[("../escape.py", b"x".to_vec())]).unwrap();
        assert!(matches!(inspect_zip(&evil, 1 << 20), Err(ArchiveError::Malformed(_))));
    }

    #[test]
    fn enforces_uncompressed_cap() {
        let z = write_deterministic_zip(&[("a", vec![0u8; 100]), ("b", vec![0u8; 100])]).unwrap();
        assert!(inspect_zip(&z, 200).is_ok());
        assert!(matches!(inspect_zip(&z, 199), Err(ArchiveError::TooLarge { .. })));
    }

    #[test]
    fn extracts_into_destination() {
        let dir = tempfile::tempdir().unwrap();
        let z = write_deterministic_zip(&[("main.py", b"x".to_vec()), ("pkg/m.py", b"y".to_vec())]).unwrap();
        let written = extract_zip(&z, dir.path(), 1 << 20).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(dir.path().join("pkg/m.py")).unwrap(), b"y");
    }
}
