//! Flat `key=value` config file. Command-line flags take precedence over
//! file values; file values take precedence over built-in defaults.

use std::collections::HashMap;
use std::path::Path;

use crate::AppError;

const KNOWN_KEYS: &[&str] = &[
    "valid_ratio_min",
    "cut_fraction",
    "bins",
    "hist_lo",
    "hist_hi",
    "grouping",
    "far_plane",
    "tau",
    "threads",
];

/// Parsed config file contents.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    /// Loads a config file. Blank lines and `#` comments are ignored;
    /// unknown keys are usage errors so typos fail loudly.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AppError::Usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(AppError::Usage(format!(
                    "{}:{}: unknown config key {key:?}",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get_string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, AppError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| AppError::Usage(format!("config key {key}: bad number {v:?}"))),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, AppError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| AppError::Usage(format!("config key {key}: bad integer {v:?}"))),
        }
    }
}
