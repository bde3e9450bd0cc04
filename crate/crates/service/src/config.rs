//! Service configuration: one TOML file, then `MEDAGENT_*` environment
//! overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! model_dir = "models"
//! grid_cap = 4096
//! workers = 1
//! max_jobs = 4
//! max_queued = 16
//! upload_limit = 512000
//! survey_log = "survey.ndjson"
//! static_dir = "ui/dist"
//! session_idle_secs = 1800
//! train_seed = 20220901
//! ```
//!
//! Every key is optional. `MEDAGENT_LISTEN`, `MEDAGENT_MODEL_DIR` and so on
//! override the file, one variable per key.

use std::path::{Path, PathBuf};

use medagent_core::demo::DEMO_SEED;
use medagent_core::grid::DEFAULT_GRID_CAP;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "MEDAGENT_";

/// 500 KiB, the largest accepted dataset upload.
pub const DEFAULT_UPLOAD_LIMIT: usize = 500 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {var}: cannot parse {value:?}")]
    Env { var: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub model_dir: PathBuf,
    pub grid_cap: usize,
    /// Grid-search threads per training job.
    pub workers: usize,
    /// Training jobs allowed to run at once.
    pub max_jobs: usize,
    /// Jobs allowed to wait for a free slot before submissions are refused.
    pub max_queued: usize,
    pub upload_limit: usize,
    pub survey_log: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub session_idle_secs: u64,
    pub train_seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            model_dir: "models".into(),
            grid_cap: DEFAULT_GRID_CAP,
            workers: 1,
            max_jobs: 4,
            max_queued: 16,
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            survey_log: "survey.ndjson".into(),
            static_dir: None,
            session_idle_secs: 30 * 60,
            train_seed: DEMO_SEED,
        }
    }
}

fn parse<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        var: var.to_string(),
        value: value.to_string(),
    })
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Read `path`, apply the process environment and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (var, value) in vars {
            let Some(key) = var.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "LISTEN" => self.listen = value,
                "MODEL_DIR" => self.model_dir = value.into(),
                "GRID_CAP" => self.grid_cap = parse(&var, &value)?,
                "WORKERS" => self.workers = parse(&var, &value)?,
                "MAX_JOBS" => self.max_jobs = parse(&var, &value)?,
                "MAX_QUEUED" => self.max_queued = parse(&var, &value)?,
                "UPLOAD_LIMIT" => self.upload_limit = parse(&var, &value)?,
                "SURVEY_LOG" => self.survey_log = value.into(),
                "STATIC_DIR" => self.static_dir = (!value.is_empty()).then(|| value.into()),
                "SESSION_IDLE_SECS" => self.session_idle_secs = parse(&var, &value)?,
                "TRAIN_SEED" => self.train_seed = parse(&var, &value)?,
                _ => tracing::warn!("ignoring unknown variable {var}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.grid_cap == 0 {
            return invalid("grid_cap must be positive");
        }
        if self.max_jobs == 0 {
            return invalid("max_jobs must be positive");
        }
        if self.upload_limit == 0 {
            return invalid("upload_limit must be positive");
        }
        if self.session_idle_secs == 0 {
            return invalid("session_idle_secs must be positive");
        }
        Ok(())
    }
}
