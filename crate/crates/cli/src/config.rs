//! Flat `key = value` configuration files.
//!
//! Keys mirror the long CLI options with underscores. Unknown keys are a
//! hard error so typos never silently fall back to defaults.

use crate::{CliError, Result};
use std::collections::HashMap;
use std::path::Path;

/// Every key a config file may carry.
const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "artifact_strength",
    "base_channels",
    "batch_size",
    "beta1",
    "beta2",
    "branch",
    "checkpoint",
    "checkpoint_interval",
    "data_dir",
    "epsilon",
    "heatmaps",
    "input_size",
    "lambda",
    "log_every",
    "num_classes",
    "out_dir",
    "resume",
    "root_seed",
    "scale",
    "split",
    "steps",
    "use_landmarks",
    "variant",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> FileConfig {
        FileConfig::default()
    }

    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("read config {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    ln + 1
                ))
            })?;
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key `{key}`",
                    path.display(),
                    ln + 1
                )));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!(
                    "{}:{}: duplicate config key `{key}`",
                    path.display(),
                    ln + 1
                )));
            }
        }
        Ok(FileConfig { values })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            CliError::Usage(format!("config key `{key}`: cannot parse `{raw}`"))
        })
    }

    /// CLI value if given, else the file value, else the default.
    pub fn resolve<T: std::str::FromStr>(&self, key: &str, cli: Option<T>, default: T) -> Result<T> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    /// File value if present (for keys with no default).
    pub fn resolve_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            Some(raw) => Ok(Some(self.parse(key, raw)?)),
            None => Ok(None),
        }
    }
}
