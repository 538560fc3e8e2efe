//! Platform configuration, read from `RBOARD_*` environment variables.

use std::path::PathBuf;
use std::time::Duration;

use crate::runner::{default_workers, CommandTemplate, SandboxLimits};
use crate::submission::DEFAULT_ARCHIVE_CAP;

#[derive(Debug, Clone)]
pub struct PlatformConfig {
    pub data_dir: PathBuf,
    /// Run sandboxes; defaults to `<data_dir>/work`.
    pub work_dir: Option<PathBuf>,
    pub limits: SandboxLimits,
    pub workers: usize,
    pub command: CommandTemplate,
    pub archive_cap: u64,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid value for {var}: {message}")]
pub struct ConfigError {
    pub var: &'static str,
    pub message: String,
}

impl PlatformConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        PlatformConfig {
            data_dir: data_dir.into(),
            work_dir: None,
            limits: SandboxLimits::default(),
            workers: default_workers(),
            command: CommandTemplate::default(),
            archive_cap: DEFAULT_ARCHIVE_CAP,
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Variables: `RBOARD_DATA_DIR`, `RBOARD_WORK_DIR`, `RBOARD_TIMEOUT_SECS`,
    /// `RBOARD_MEM_BYTES`, `RBOARD_MAX_OUTPUT_BYTES`, `RBOARD_WORKERS`,
    /// `RBOARD_CMD_TEMPLATE`, `RBOARD_MAX_ARCHIVE_BYTES`.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn num<T: std::str::FromStr>(var: &'static str, raw: &str) -> Result<T, ConfigError> {
            raw.trim().parse().map_err(|_| ConfigError {
                var,
                message: format!("`{raw}` is not a non-negative integer"),
            })
        }
        let mut config = PlatformConfig::new(lookup("RBOARD_DATA_DIR").unwrap_or_else(|| "rboard-data".into()));
        config.work_dir = lookup("RBOARD_WORK_DIR").map(PathBuf::from);
        if let Some(v) = lookup("RBOARD_TIMEOUT_SECS") {
            config.limits.wall_timeout = Duration::from_secs_f64(num::<f64>("RBOARD_TIMEOUT_SECS", &v)?.max(0.0));
        }
        if let Some(v) = lookup("RBOARD_MEM_BYTES") {
            config.limits.memory_bytes = num("RBOARD_MEM_BYTES", &v)?;
        }
        if let Some(v) = lookup("RBOARD_MAX_OUTPUT_BYTES") {
            config.limits.max_output_bytes = num("RBOARD_MAX_OUTPUT_BYTES", &v)?;
        }
        if let Some(v) = lookup("RBOARD_WORKERS") {
            config.workers = num("RBOARD_WORKERS", &v)?;
        }
        if let Some(v) = lookup("RBOARD_MAX_ARCHIVE_BYTES") {
            config.archive_cap = num("RBOARD_MAX_ARCHIVE_BYTES", &v)?;
        }
        if let Some(v) = lookup("RBOARD_CMD_TEMPLATE") {
            config.command = CommandTemplate::parse(&v).map_err(|message| ConfigError {
                var: "RBOARD_CMD_TEMPLATE",
                message,
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.limits.validate().map_err(|message| ConfigError {
            var: "sandbox limits",
            message,
        })?;
        if self.workers == 0 {
            return Err(ConfigError {
                var: "RBOARD_WORKERS",
                message: "at least one worker is required".into(),
            });
        }
        if self.archive_cap == 0 {
            return Err(ConfigError {
                var: "RBOARD_MAX_ARCHIVE_BYTES",
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}
