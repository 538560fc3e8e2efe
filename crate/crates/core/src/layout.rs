//! On-disk layout of a platform root.

use std::path::{Path, PathBuf};

/// Resolves every path the platform reads or writes under one root directory.
///
/// ```text
/// data/<dataset_id>/raw.csv, descriptor.json
/// public/<dataset_id>/train.csv, valid.csv, test_input.csv, MANIFEST.json
/// hidden/<dataset_id>/test.csv, bundle.json
/// store/, archives/
/// runs/<run_id>/predictions.csv, log.txt
/// work/<run_id>-<nonce>/        per-run sandbox, removed after the run
/// ```
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
    work: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let work = root.join("work");
        Layout { root, work }
    }

    /// Places run sandboxes somewhere other than `<root>/work`.
    pub fn with_work_dir(mut self, work: impl Into<PathBuf>) -> Self {
        self.work = work.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self, dataset_id: &str) -> PathBuf {
        self.root.join("data").join(dataset_id)
    }

    pub fn raw_csv(&self, dataset_id: &str) -> PathBuf {
        self.data_dir(dataset_id).join("raw.csv")
    }

    pub fn public_dir(&self, dataset_id: &str) -> PathBuf {
        self.root.join("public").join(dataset_id)
    }

    pub fn hidden_root(&self) -> PathBuf {
        self.root.join("hidden")
    }

    pub fn hidden_dir(&self, dataset_id: &str) -> PathBuf {
        self.hidden_root().join(dataset_id)
    }

    pub fn hidden_test(&self, dataset_id: &str) -> PathBuf {
        self.hidden_dir(dataset_id).join("test.csv")
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.root.join(".staging")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn work_root(&self) -> &Path {
        &self.work
    }
}
