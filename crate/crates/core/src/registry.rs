//! Dataset identity, raw-file validation and registration.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::digest::{sha256_file, sha256_hex, write_atomic};
use crate::layout::Layout;
use crate::preprocessing::split::{Interaction, SplitRatios, DEFAULT_RATIOS};
use crate::preprocessing::{PreprocessError, Preprocessor};
use crate::store::{RecordKind, Store, StoreError};
use crate::task::Task;

/// Column added to the public CTR test input; reserved in raw files.
pub const ROW_ID_COLUMN: &str = "row_id";

pub const MAX_DATASET_ID_LEN: usize = 64;

/// Dataset ids are lowercase slugs: `[a-z0-9-]{1,64}`.
pub fn is_valid_dataset_id(id: &str) -> bool {
    (1..=MAX_DATASET_ID_LEN).contains(&id.len())
        && id.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'-'))
}

/// Column roles of a raw CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnSchema {
    Ctr { features: Vec<String>, label: String },
    TopN { user: String, item: String, timestamp: String },
}

impl ColumnSchema {
    pub fn task(&self) -> Task {
        match self {
            ColumnSchema::Ctr { .. } => Task::Ctr,
            ColumnSchema::TopN { .. } => Task::TopN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProtocol {
    RandomStratified,
    LeaveLatestOut,
}

impl SplitProtocol {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ctr => SplitProtocol::RandomStratified,
            Task::TopN => SplitProtocol::LeaveLatestOut,
        }
    }
}

/// Split parameters. The seed never leaves the server: only
/// [`PublicSplitConfig`] is ever serialized for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub protocol: SplitProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<SplitRatios>,
    pub secret_seed: u64,
}

impl SplitConfig {
    /// The standard protocol for `task` with default ratios.
    pub fn default_for(task: Task, secret_seed: u64) -> Self {
        let protocol = SplitProtocol::for_task(task);
        SplitConfig {
            protocol,
            ratios: (protocol == SplitProtocol::RandomStratified).then_some(DEFAULT_RATIOS),
            secret_seed,
        }
    }

    pub fn public(&self) -> PublicSplitConfig {
        PublicSplitConfig {
            protocol: self.protocol,
            ratios: self.ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicSplitConfig {
    pub protocol: SplitProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<SplitRatios>,
}

/// Everything needed to register a dataset except the checksum, which is
/// computed from the uploaded bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewDataset {
    pub dataset_id: String,
    pub task: Task,
    pub name: String,
    pub schema: ColumnSchema,
    pub split_config: SplitConfig,
}

/// Server-side dataset record, including the secret split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    pub task: Task,
    pub name: String,
    pub raw_checksum: String,
    pub schema: ColumnSchema,
    pub split_config: SplitConfig,
    pub created_at: DateTime<Utc>,
}

/// Client-facing projection of a [`DatasetDescriptor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicDescriptor {
    pub dataset_id: String,
    pub task: Task,
    pub name: String,
    pub raw_checksum: String,
    pub schema: ColumnSchema,
    pub split: PublicSplitConfig,
    pub created_at: DateTime<Utc>,
}

impl DatasetDescriptor {
    pub fn public(&self) -> PublicDescriptor {
        PublicDescriptor {
            dataset_id: self.dataset_id.clone(),
            task: self.task,
            name: self.name.clone(),
            raw_checksum: self.raw_checksum.clone(),
            schema: self.schema.clone(),
            split: self.split_config.public(),
            created_at: self.created_at,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid dataset id `{0}` (expected [a-z0-9-]{{1,64}})")]
    InvalidId(String),
    #[error("dataset `{0}` already exists")]
    DuplicateId(String),
    #[error("dataset `{0}` not found")]
    NotFound(String),
    #[error("schema violation{}{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default(), column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    SchemaViolation {
        /// 1-based data row (the header is row 0).
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },
    #[error("raw file has no data rows")]
    EmptyDataset,
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("raw file for `{0}` no longer matches its checksum")]
    ChecksumMismatch(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn violation(row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> RegistryError {
    RegistryError::SchemaViolation {
        row,
        column: column.map(str::to_string),
        message: message.into(),
    }
}

/// A raw file parsed against its schema.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub content: RawContent,
}

#[derive(Debug, Clone)]
pub enum RawContent {
    Ctr { label_column: usize, labels: Vec<bool> },
    TopN { interactions: Vec<Interaction> },
}

fn read_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>), RegistryError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| violation(Some(0), None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(violation(Some(0), None, "missing header row"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(violation(Some(0), Some(dup), "duplicate column name"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(i + 1, |p| p.record() as usize);
            violation(Some(row), None, e.to_string())
        })?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(RegistryError::EmptyDataset);
    }
    Ok((header, rows))
}

fn column_index(header: &[String], name: &str) -> Result<usize, RegistryError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| violation(Some(0), Some(name), "column missing from header"))
}

/// Parses and validates a raw CSV against `schema`.
pub fn parse_raw(schema: &ColumnSchema, bytes: &[u8]) -> Result<RawTable, RegistryError> {
    let (header, rows) = read_csv(bytes)?;
    let content = match schema {
        ColumnSchema::Ctr { features, label } => {
            let label_column = column_index(&header, label)?;
            for f in features {
                column_index(&header, f)?;
            }
            let expected: BTreeSet<&str> = features.iter().chain([label]).map(String::as_str).collect();
            if let Some(extra) = header.iter().find(|h| !expected.contains(h.as_str())) {
                return Err(violation(Some(0), Some(extra), "column not declared in schema"));
            }
            let mut labels = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                labels.push(match row[label_column].as_str() {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(violation(
                            Some(i + 1),
                            Some(label),
                            format!("label `{other}` is not 0 or 1"),
                        ))
                    }
                });
            }
            RawContent::Ctr { label_column, labels }
        }
        ColumnSchema::TopN { user, item, timestamp } => {
            let (u, it, ts) = (
                column_index(&header, user)?,
                column_index(&header, item)?,
                column_index(&header, timestamp)?,
            );
            if header.len() != 3 {
                return Err(violation(
                    Some(0),
                    None,
                    "interaction files have exactly the user, item and timestamp columns",
                ));
            }
            let mut pairs = HashSet::new();
            let mut interactions = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let row_no = Some(i + 1);
                if row[u].is_empty() {
                    return Err(violation(row_no, Some(user), "empty user id"));
                }
                if row[it].is_empty() {
                    return Err(violation(row_no, Some(item), "empty item id"));
                }
                let t: u64 = row[ts].parse().map_err(|_| {
                    violation(
                        row_no,
                        Some(timestamp),
                        format!("`{}` is not a non-negative integer epoch", row[ts]),
                    )
                })?;
                if !pairs.insert((row[u].as_str(), row[it].as_str())) {
                    return Err(violation(
                        row_no,
                        Some(item),
                        format!("duplicate interaction ({}, {})", row[u], row[it]),
                    ));
                }
                interactions.push(Interaction {
                    user: row[u].clone(),
                    item: row[it].clone(),
                    timestamp: t,
                });
            }
            RawContent::TopN { interactions }
        }
    };
    Ok(RawTable { header, rows, content })
}

fn validate_new(new: &NewDataset) -> Result<(), RegistryError> {
    if !is_valid_dataset_id(&new.dataset_id) {
        return Err(RegistryError::InvalidId(new.dataset_id.clone()));
    }
    if new.schema.task() != new.task {
        return Err(RegistryError::InvalidConfig(format!(
            "schema kind does not match task `{}`",
            new.task
        )));
    }
    let protocol = new.split_config.protocol;
    if protocol != SplitProtocol::for_task(new.task) {
        return Err(RegistryError::InvalidConfig(format!(
            "protocol {protocol:?} is not used for task `{}`",
            new.task
        )));
    }
    match (protocol, &new.split_config.ratios) {
        (SplitProtocol::RandomStratified, Some(r)) => r
            .validate()
            .map_err(|e| RegistryError::InvalidConfig(e.to_string()))?,
        (SplitProtocol::RandomStratified, None) => {
            return Err(RegistryError::InvalidConfig("stratified split needs ratios".into()))
        }
        (SplitProtocol::LeaveLatestOut, Some(_)) => {
            return Err(RegistryError::InvalidConfig("leave-latest-out takes no ratios".into()))
        }
        (SplitProtocol::LeaveLatestOut, None) => {}
    }
    if let ColumnSchema::Ctr { features, label } = &new.schema {
        if features.is_empty() {
            return Err(RegistryError::InvalidConfig("CTR schema needs at least one feature".into()));
        }
        if features.iter().chain([label]).any(|c| c == ROW_ID_COLUMN) {
            return Err(RegistryError::InvalidConfig(format!("`{ROW_ID_COLUMN}` is reserved")));
        }
    }
    Ok(())
}

/// Owns registered datasets. Registrations are serialized; reads are not.
pub struct Registry {
    layout: Layout,
    store: Arc<Store>,
    preprocessor: Preprocessor,
    write_lock: Mutex<()>,
}

impl Registry {
    pub fn new(layout: Layout, store: Arc<Store>) -> Self {
        let preprocessor = Preprocessor::new(layout.clone());
        Registry {
            layout,
            store,
            preprocessor,
            write_lock: Mutex::new(()),
        }
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    /// Validates, stores and preprocesses a new dataset.
    ///
    /// Either every artifact (raw file, descriptor, public and hidden
    /// bundles, registry record) exists afterwards, or none does.
    pub fn register(&self, new: NewDataset, raw: &[u8]) -> Result<String, RegistryError> {
        validate_new(&new)?;
        let _guard = self.write_lock.lock();
        let id = new.dataset_id.clone();
        if self.store.contains(RecordKind::Dataset, &id) {
            return Err(RegistryError::DuplicateId(id));
        }
        // Leftovers from a registration that crashed before committing.
        for dir in [
            self.layout.data_dir(&id),
            self.layout.public_dir(&id),
            self.layout.hidden_dir(&id),
        ] {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
        }

        let table = parse_raw(&new.schema, raw)?;
        let descriptor = DatasetDescriptor {
            dataset_id: id.clone(),
            task: new.task,
            name: new.name,
            raw_checksum: sha256_hex(raw),
            schema: new.schema,
            split_config: new.split_config,
            created_at: Utc::now(),
        };

        let result = (|| -> Result<(), RegistryError> {
            let data = self.layout.data_dir(&id);
            write_atomic(&data.join("raw.csv"), raw)?;
            write_atomic(
                &data.join("descriptor.json"),
                &serde_json::to_vec_pretty(&descriptor).map_err(StoreError::from)?,
            )?;
            self.preprocessor.run_with_table(&descriptor, &table)?;
            self.store.put_json(RecordKind::Dataset, &id, &descriptor)?;
            Ok(())
        })();
        if let Err(e) = result {
            for dir in [
                self.layout.data_dir(&id),
                self.layout.public_dir(&id),
                self.layout.hidden_dir(&id),
            ] {
                let _ = fs::remove_dir_all(dir);
            }
            return Err(e);
        }
        tracing::info!(dataset = %id, task = %descriptor.task, "dataset registered");
        Ok(id)
    }

    /// Full descriptor including the seed. Never hand this to clients.
    pub fn descriptor(&self, id: &str) -> Result<DatasetDescriptor, RegistryError> {
        if !is_valid_dataset_id(id) {
            return Err(RegistryError::NotFound(id.to_string()));
        }
        match self.store.get_json(RecordKind::Dataset, id) {
            Err(StoreError::NotFound { .. }) => Err(RegistryError::NotFound(id.to_string())),
            other => Ok(other?),
        }
    }

    pub fn get_dataset(&self, id: &str) -> Result<PublicDescriptor, RegistryError> {
        Ok(self.descriptor(id)?.public())
    }

    /// Public descriptors sorted by id, optionally restricted to one task.
    pub fn list_datasets(&self, task: Option<Task>) -> Result<Vec<PublicDescriptor>, RegistryError> {
        Ok(self
            .store
            .list_filtered(RecordKind::Dataset, |d: &DatasetDescriptor| {
                task.is_none_or(|t| d.task == t)
            })?
            .iter()
            .map(DatasetDescriptor::public)
            .collect())
    }

    pub fn dataset_ids(&self, task: Task) -> Result<Vec<String>, RegistryError> {
        Ok(self
            .list_datasets(Some(task))?
            .into_iter()
            .map(|d| d.dataset_id)
            .collect())
    }

    /// Raw bytes, verified against the recorded checksum.
    pub fn raw_bytes(&self, id: &str) -> Result<Vec<u8>, RegistryError> {
        let descriptor = self.descriptor(id)?;
        let path = self.layout.raw_csv(id);
        if sha256_file(&path)? != descriptor.raw_checksum {
            return Err(RegistryError::ChecksumMismatch(id.to_string()));
        }
        Ok(fs::read(path)?)
    }

    /// Re-runs preprocessing from the stored raw file.
    pub fn preprocess(&self, id: &str) -> Result<crate::preprocessing::PublicManifest, RegistryError> {
        let descriptor = self.descriptor(id)?;
        let raw = self.raw_bytes(id)?;
        Ok(self.preprocessor.run(&descriptor, &raw)?)
    }
}
