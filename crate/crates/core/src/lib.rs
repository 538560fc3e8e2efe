//! Core of a reproducible recommender-system leaderboard: dataset
//! registry, deterministic splits, sandboxed submission runs, metric
//! evaluation and rank aggregation.
//!
//! Metric and aggregation code is generic over [`scalar::Real`] (`f32` or
//! `f64`); the aliases below fix the platform's scalar to `f64`.

pub mod aggregation;
pub mod archive;
pub mod config;
pub mod digest;
pub mod evaluation;
pub mod layout;
pub mod metrics;
pub mod platform;
pub mod preprocessing;
pub mod registry;
pub mod runner;
pub mod scalar;
pub mod store;
pub mod submission;
pub mod task;

pub use config::PlatformConfig;
pub use platform::{ErrorClass, Platform, PlatformError, PlatformResult, RunView, SubmissionView, SubmitReceipt};
pub use registry::{ColumnSchema, DatasetDescriptor, NewDataset, PublicDescriptor, SplitConfig, SplitProtocol};
pub use runner::{RunRecord, RunStatus, SandboxLimits};
pub use scalar::Real;
pub use submission::{Submission, SubmissionStatus};
pub use task::Task;

/// Scalar used for stored metrics and leaderboard values.
pub type Score = f64;
pub type MetricResult = evaluation::MetricResult<Score>;
pub type LeaderboardEntry = aggregation::LeaderboardEntry<Score>;
pub type DatasetStanding = aggregation::DatasetStanding<Score>;
pub type TaskSnapshot = aggregation::TaskSnapshot<Score>;
