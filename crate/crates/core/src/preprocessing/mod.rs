//! Turns a registered raw file into train/valid/test splits and the public
//! bundle handed to submissions.
//!
//! Hidden artifacts live under `hidden/<id>/` and are read only by the
//! evaluator. Public artifacts live under `public/<id>/`:
//!
//! * CTR: `test_input.csv` is the test rows without the label column, plus a
//!   positional `row_id` column.
//! * Top-N: `test_input.csv` is the sorted list of evaluated users.
//!
//! Validation labels are public so submissions can tune against them.

pub mod split;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::archive::{write_deterministic_zip, ArchiveError};
use crate::digest::{sha256_hex, write_atomic};
use crate::layout::Layout;
use crate::registry::{
    parse_raw, ColumnSchema, DatasetDescriptor, RawContent, RawTable, RegistryError, ROW_ID_COLUMN,
};
use crate::task::Task;
use split::{split_leave_latest_out, split_random_stratified, SplitError, SplitIndices};

pub const TRAIN_FILE: &str = "train.csv";
pub const VALID_FILE: &str = "valid.csv";
pub const TEST_INPUT_FILE: &str = "test_input.csv";
pub const TEST_FILE: &str = "test.csv";
pub const MANIFEST_FILE: &str = "MANIFEST.json";
pub const HIDDEN_META_FILE: &str = "bundle.json";
/// Header of the Top-N `test_input.csv`.
pub const USER_ID_COLUMN: &str = "user_id";

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("test split contains a single label class; AUC would be undefined")]
    TestSingleClass,
    #[error("no user has enough interactions to be evaluated")]
    NoEvaluatedUsers,
    #[error("raw file no longer parses: {0}")]
    Raw(String),
    #[error("preprocessing of `{0}` failed in a concurrent run: {1}")]
    Concurrent(String, String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Full split, including the hidden test part.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub dataset_id: String,
    pub task: Task,
    pub header: Vec<String>,
    pub train: Vec<Vec<String>>,
    pub valid: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
    /// Sorted evaluated users (Top-N only).
    pub evaluated_users: Vec<String>,
    /// Position of the label column (CTR only).
    pub label_column: Option<usize>,
    /// SHA-256 of `dataset_id ‖ seed (big-endian)`; lets an auditor who is
    /// later given the seed confirm it was the one used.
    pub seed_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicManifest {
    pub dataset_id: String,
    pub task: Task,
    pub files: Vec<FileDigest>,
}

/// What submissions get to see.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicBundle {
    pub dataset_id: String,
    pub train: Vec<u8>,
    pub valid: Vec<u8>,
    pub test_input: Vec<u8>,
    pub manifest: PublicManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct HiddenMeta {
    dataset_id: String,
    task: Task,
    split_files: Vec<FileDigest>,
    seed_fingerprint: String,
}

pub fn seed_fingerprint(dataset_id: &str, seed: u64) -> String {
    let mut bytes = dataset_id.as_bytes().to_vec();
    bytes.extend_from_slice(&seed.to_be_bytes());
    sha256_hex(&bytes)
}

/// Serializes a table as `\n`-terminated CSV.
pub fn csv_bytes<'a>(header: &[String], rows: impl IntoIterator<Item = &'a Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn digest(name: &str, bytes: &[u8]) -> FileDigest {
    FileDigest {
        name: name.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

impl SplitBundle {
    /// Splits `table` according to the descriptor's protocol and seed.
    pub fn build(descriptor: &DatasetDescriptor, table: &RawTable) -> Result<Self, PreprocessError> {
        let seed = descriptor.split_config.secret_seed;
        let pick = |idx: &[usize]| -> Vec<Vec<String>> { idx.iter().map(|&i| table.rows[i].clone()).collect() };
        let (indices, evaluated_users, label_column): (SplitIndices, Vec<String>, Option<usize>) =
            match &table.content {
                RawContent::Ctr { label_column, labels } => {
                    let ratios = descriptor
                        .split_config
                        .ratios
                        .unwrap_or(split::DEFAULT_RATIOS);
                    let idx = split_random_stratified(labels, &ratios, seed)?;
                    let test_pos = idx.test.iter().filter(|&&i| labels[i]).count();
                    if test_pos == 0 || test_pos == idx.test.len() {
                        return Err(PreprocessError::TestSingleClass);
                    }
                    (idx, Vec::new(), Some(*label_column))
                }
                RawContent::TopN { interactions } => {
                    let s = split_leave_latest_out(interactions)?;
                    if s.evaluated_users.is_empty() {
                        return Err(PreprocessError::NoEvaluatedUsers);
                    }
                    (s.indices, s.evaluated_users, None)
                }
            };
        Ok(SplitBundle {
            dataset_id: descriptor.dataset_id.clone(),
            task: descriptor.task,
            header: table.header.clone(),
            train: pick(&indices.train),
            valid: pick(&indices.valid),
            test: pick(&indices.test),
            evaluated_users,
            label_column,
            seed_fingerprint: seed_fingerprint(&descriptor.dataset_id, seed),
        })
    }

    pub fn train_csv(&self) -> Vec<u8> {
        csv_bytes(&self.header, &self.train)
    }

    pub fn valid_csv(&self) -> Vec<u8> {
        csv_bytes(&self.header, &self.valid)
    }

    /// The hidden test file, labels and held-out items included.
    pub fn test_csv(&self) -> Vec<u8> {
        csv_bytes(&self.header, &self.test)
    }

    /// Checksums of the train, valid and hidden test files.
    pub fn checksums(&self) -> Vec<FileDigest> {
        vec![
            digest(TRAIN_FILE, &self.train_csv()),
            digest(VALID_FILE, &self.valid_csv()),
            digest(TEST_FILE, &self.test_csv()),
        ]
    }
}

/// Projects a split onto what submissions may see.
pub fn derive_public_bundle(bundle: &SplitBundle) -> PublicBundle {
    let test_input = match bundle.label_column {
        Some(label) => {
            let mut header: Vec<String> = bundle
                .header
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != label)
                .map(|(_, h)| h.clone())
                .collect();
            header.push(ROW_ID_COLUMN.to_string());
            let rows: Vec<Vec<String>> = bundle
                .test
                .iter()
                .enumerate()
                .map(|(row_id, row)| {
                    let mut out: Vec<String> = row
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != label)
                        .map(|(_, v)| v.clone())
                        .collect();
                    out.push(row_id.to_string());
                    out
                })
                .collect();
            csv_bytes(&header, &rows)
        }
        None => {
            let rows: Vec<Vec<String>> = bundle.evaluated_users.iter().map(|u| vec![u.clone()]).collect();
            csv_bytes(&[USER_ID_COLUMN.to_string()], &rows)
        }
    };
    let train = bundle.train_csv();
    let valid = bundle.valid_csv();
    let manifest = PublicManifest {
        dataset_id: bundle.dataset_id.clone(),
        task: bundle.task,
        files: vec![
            digest(TRAIN_FILE, &train),
            digest(VALID_FILE, &valid),
            digest(TEST_INPUT_FILE, &test_input),
        ],
    };
    PublicBundle {
        dataset_id: bundle.dataset_id.clone(),
        train,
        valid,
        test_input,
        manifest,
    }
}

fn write_dir(dir: &Path, files: &[(&str, Vec<u8>)]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

/// Replaces `target` with the fully written `staged` directory.
fn swap_in(staged: &Path, target: &Path) -> io::Result<()> {
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    if target.exists() {
        let old = staged.with_extension("old");
        fs::rename(target, &old)?;
        fs::rename(staged, target)?;
        fs::remove_dir_all(old)?;
    } else {
        fs::rename(staged, target)?;
    }
    Ok(())
}

type Flight = Arc<OnceLock<Result<PublicManifest, String>>>;

/// Writes split artifacts. At most one preprocessing run per dataset is in
/// flight; concurrent callers for the same dataset wait on and share the
/// in-progress result.
pub struct Preprocessor {
    layout: Layout,
    in_flight: Mutex<HashMap<String, Flight>>,
}

impl Preprocessor {
    pub fn new(layout: Layout) -> Self {
        Preprocessor {
            layout,
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    /// Preprocesses from raw bytes.
    pub fn run(&self, descriptor: &DatasetDescriptor, raw: &[u8]) -> Result<PublicManifest, PreprocessError> {
        let table = parse_raw(&descriptor.schema, raw).map_err(|e| match e {
            RegistryError::SchemaViolation { .. } | RegistryError::EmptyDataset => {
                PreprocessError::Raw(e.to_string())
            }
            other => PreprocessError::Raw(other.to_string()),
        })?;
        self.run_with_table(descriptor, &table)
    }

    pub fn run_with_table(
        &self,
        descriptor: &DatasetDescriptor,
        table: &RawTable,
    ) -> Result<PublicManifest, PreprocessError> {
        let id = descriptor.dataset_id.clone();
        let (flight, leader) = {
            let mut map = self.in_flight.lock();
            match map.get(&id) {
                Some(f) => (f.clone(), false),
                None => {
                    let f: Flight = Arc::default();
                    map.insert(id.clone(), f.clone());
                    (f, true)
                }
            }
        };
        if !leader {
            // Blocks until the leader has stored its result.
            let shared = flight.wait().clone();
            return shared.map_err(|msg| PreprocessError::Concurrent(id, msg));
        }
        let mut outcome = None;
        flight.get_or_init(|| {
            let r = self.materialize(descriptor, table);
            let shared = r.as_ref().map(Clone::clone).map_err(ToString::to_string);
            outcome = Some(r);
            shared
        });
        self.in_flight.lock().remove(&id);
        outcome.expect("leader initializes the flight")
    }

    fn materialize(&self, descriptor: &DatasetDescriptor, table: &RawTable) -> Result<PublicManifest, PreprocessError> {
        let bundle = SplitBundle::build(descriptor, table)?;
        let public = derive_public_bundle(&bundle);
        let id = &descriptor.dataset_id;
        let staging = self
            .layout
            .staging_dir()
            .join(format!("{id}-{}", uuid::Uuid::new_v4().simple()));
        let result = (|| -> Result<(), PreprocessError> {
            let manifest_json = serde_json::to_vec_pretty(&public.manifest).map_err(io::Error::from)?;
            write_dir(
                &staging.join("public"),
                &[
                    (TRAIN_FILE, public.train.clone()),
                    (VALID_FILE, public.valid.clone()),
                    (TEST_INPUT_FILE, public.test_input.clone()),
                    (MANIFEST_FILE, manifest_json),
                ],
            )?;
            let meta = HiddenMeta {
                dataset_id: id.clone(),
                task: bundle.task,
                split_files: bundle.checksums(),
                seed_fingerprint: bundle.seed_fingerprint.clone(),
            };
            write_dir(
                &staging.join("hidden"),
                &[
                    (TEST_FILE, bundle.test_csv()),
                    (HIDDEN_META_FILE, serde_json::to_vec_pretty(&meta).map_err(io::Error::from)?),
                ],
            )?;
            swap_in(&staging.join("hidden"), &self.layout.hidden_dir(id))?;
            swap_in(&staging.join("public"), &self.layout.public_dir(id))?;
            Ok(())
        })();
        let _ = fs::remove_dir_all(&staging);
        result?;
        Ok(public.manifest)
    }

    /// The manifest of the current public bundle.
    pub fn manifest(&self, dataset_id: &str) -> Result<PublicManifest, PreprocessError> {
        let bytes = fs::read(self.layout.public_dir(dataset_id).join(MANIFEST_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| io::Error::from(e).into())
    }

    /// Zip of the public bundle: the three data files plus the manifest.
    pub fn public_bundle_archive(&self, dataset_id: &str) -> Result<Vec<u8>, PreprocessError> {
        let dir = self.layout.public_dir(dataset_id);
        let mut files = Vec::new();
        for name in [TRAIN_FILE, VALID_FILE, TEST_INPUT_FILE, MANIFEST_FILE] {
            files.push((name, fs::read(dir.join(name))?));
        }
        Ok(write_deterministic_zip(&files)?)
    }
}

/// Source of the split protocols, shipped in preprocessing exports.
pub const SPLIT_SOURCE: &str = include_str!("split.rs");

#[derive(Serialize)]
struct ExportParams<'a> {
    dataset_id: &'a str,
    task: Task,
    schema: &'a ColumnSchema,
    split: crate::registry::PublicSplitConfig,
    raw_checksum: &'a str,
    public_files: &'a [FileDigest],
}

fn protocol_readme(descriptor: &DatasetDescriptor) -> String {
    let body = match descriptor.split_config.ratios {
        Some(r) => format!(
            "Protocol: label-stratified random split.\n\n\
             Ratios (train, valid, test): ({}, {}, {}).\n\
             Part sizes use largest-remainder rounding of the row count; each\n\
             label class stays within one row of its exact quota per part.\n\
             Rows are shuffled with ChaCha8 seeded by a secret 64-bit seed,\n\
             which is withheld. See `largest_remainder` and\n\
             `split_random_stratified` in split.rs.\n\n\
             test_input.csv holds the test rows without the label column, plus\n\
             `row_id` numbering rows 0..n-1 in hidden-test order.\n",
            r.train, r.valid, r.test
        ),
        None => "Protocol: per-user leave-latest-out.\n\n\
             For users with at least 3 interactions, the latest goes to test,\n\
             the second latest to valid, the rest to train. Equal timestamps\n\
             are ordered by item id (larger id counts as later). Users with\n\
             fewer interactions are train-only and not evaluated. See\n\
             `split_leave_latest_out` in split.rs.\n\n\
             test_input.csv lists the evaluated users in sorted order.\n"
            .to_string(),
    };
    format!(
        "# Preprocessing for `{}`\n\n{body}\nValidation labels are included in valid.csv.\n",
        descriptor.dataset_id
    )
}

/// Reviewable description of how a dataset was split: protocol notes,
/// parameters, checksums and the split source code. The seed is excluded.
pub fn export_preprocessing_code(
    descriptor: &DatasetDescriptor,
    manifest: &PublicManifest,
) -> Result<Vec<u8>, PreprocessError> {
    let params = ExportParams {
        dataset_id: &descriptor.dataset_id,
        task: descriptor.task,
        schema: &descriptor.schema,
        split: descriptor.split_config.public(),
        raw_checksum: &descriptor.raw_checksum,
        public_files: &manifest.files,
    };
    let files = vec![
        ("README.md", protocol_readme(descriptor).into_bytes()),
        ("params.json", serde_json::to_vec_pretty(&params).map_err(io::Error::from)?),
        ("split.rs", SPLIT_SOURCE.as_bytes().to_vec()),
    ];
    Ok(write_deterministic_zip(&files)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{SplitConfig, SplitProtocol};
    use chrono::TimeZone;

    fn ctr_descriptor(seed: u64) -> DatasetDescriptor {
        DatasetDescriptor {
            dataset_id: "ctr-a".into(),
            task: Task::Ctr,
            name: "A".into(),
            raw_checksum: String::new(),
            schema: ColumnSchema::Ctr {
                features: vec!["f1".into(), "f2".into()],
                label: "click".into(),
            },
            split_config: SplitConfig::default_for(Task::Ctr, seed),
            created_at: chrono::Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    fn ctr_raw(n: usize) -> Vec<u8> {
        let mut s = String::from("f1,click,f2\n");
        for i in 0..n {
            s.push_str(&format!("a{},{},b{}\n", i % 7, i % 2, i));
        }
        s.into_bytes()
    }

    #[test]
    fn ctr_test_input_drops_label_and_adds_row_id() {
        let d = ctr_descriptor(9);
        let table = parse_raw(&d.schema, &ctr_raw(30)).unwrap();
        let bundle = SplitBundle::build(&d, &table).unwrap();
        assert_eq!(bundle.test.len(), 3);
        let public = derive_public_bundle(&bundle);
        let text = String::from_utf8(public.test_input.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "f1,f2,row_id");
        assert_eq!(lines.len(), 4);
        for (i, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 3);
            assert_eq!(cols[2], i.to_string());
            // Feature values survive, the label does not.
            assert_eq!(cols[0], bundle.test[i][0]);
            assert_eq!(cols[1], bundle.test[i][2]);
        }
        assert_eq!(public.manifest.files.len(), 3);
    }

    #[test]
    fn topn_test_input_is_sorted_users() {
        let d = DatasetDescriptor {
            dataset_id: "tn".into(),
            task: Task::TopN,
            name: "t".into(),
            raw_checksum: String::new(),
            schema: ColumnSchema::TopN {
                user: "user_id".into(),
                item: "item_id".into(),
                timestamp: "ts".into(),
            },
            split_config: SplitConfig {
                protocol: SplitProtocol::LeaveLatestOut,
                ratios: None,
                secret_seed: 3,
            },
            created_at: chrono::Utc.timestamp_opt(0, 0).unwrap(),
        };
        let raw = b"user_id,item_id,ts\nu2,a,1\nu2,b,2\nu2,c,3\nu1,a,1\nu1,b,2\nu1,c,3\nu3,a,1\n";
        let table = parse_raw(&d.schema, raw).unwrap();
        let bundle = SplitBundle::build(&d, &table).unwrap();
        let public = derive_public_bundle(&bundle);
        assert_eq!(public.test_input, b"user_id\nu1\nu2\n");
        // Held-out pairs never appear in public files.
        let public_text = String::from_utf8([public.train, public.valid].concat()).unwrap();
        for row in &bundle.test {
            assert!(!public_text.contains(&format!("{},{},", row[0], row[1])));
        }
    }

    #[test]
    fn single_class_test_split_is_rejected() {
        let d = ctr_descriptor(1);
        // 5 positives / 5 negatives: the single test row has one class.
        let table = parse_raw(&d.schema, &ctr_raw(10)).unwrap();
        assert!(matches!(
            SplitBundle::build(&d, &table),
            Err(PreprocessError::TestSingleClass)
        ));
    }

    #[test]
    fn export_is_stable_and_seed_free() {
        let seed = 0xDEAD_BEEF_1234_5678u64;
        let d = ctr_descriptor(seed);
        let table = parse_raw(&d.schema, &ctr_raw(40)).unwrap();
        let manifest = derive_public_bundle(&SplitBundle::build(&d, &table).unwrap()).manifest;
        let a = export_preprocessing_code(&d, &manifest).unwrap();
        let b = export_preprocessing_code(&d, &manifest).unwrap();
        assert_eq!(sha256_hex(&a), sha256_hex(&b));
        let text = String::from_utf8_lossy(&a);
        assert!(!text.contains(&seed.to_string()));
        assert!(!text.contains("secret_seed\":"));
        assert!(!text.contains(&seed_fingerprint("ctr-a", seed)));
    }

    #[test]
    fn concurrent_preprocessing_is_single_flight() {
        let dir = tempfile::tempdir().unwrap();
        let pre = Arc::new(Preprocessor::new(Layout::new(dir.path())));
        let d = ctr_descriptor(5);
        let raw = ctr_raw(2000);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (pre, d, raw) = (pre.clone(), d.clone(), raw.clone());
                std::thread::spawn(move || pre.run(&d, &raw).unwrap())
            })
            .collect();
        let manifests: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(manifests.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(pre.manifest("ctr-a").unwrap(), manifests[0]);
        assert!(pre.in_flight.lock().is_empty());
    }
}
