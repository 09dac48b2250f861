//! Flat key-value experiment configs: one `section.key = value` pair per
//! line, `#` comments, duplicates rejected. The sha256 of the raw bytes
//! (first 16 hex digits) tags every artifact so outputs can be traced back
//! to the exact config that produced them.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse { line: usize, reason: String },
    Missing(String),
    Invalid { key: String, reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse { line, reason } => write!(f, "config line {line}: {reason}"),
            ConfigError::Missing(key) => write!(f, "config key `{key}` is required"),
            ConfigError::Invalid { key, reason } => write!(f, "config key `{key}`: {reason}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// First 16 hex digits of the sha256 of the raw config bytes.
    pub hash: String,
}

impl Config {
    pub fn from_str_source(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Config {
            values,
            hash: short_hash(text.as_bytes()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str_source(&text)
    }

    /// An empty config (for subcommands that need no model).
    pub fn empty() -> Self {
        Config {
            values: BTreeMap::new(),
            hash: short_hash(b""),
        }
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or(&self, key: &str, default: &'static str) -> &str {
        self.opt_str(key).unwrap_or(default)
    }

    pub fn require_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.opt_str(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::Invalid {
            key: key.to_string(),
            reason: format!(
                "cannot parse `{value}` as {}",
                std::any::type_name::<T>()
            ),
        })
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.opt_str(key).map(|v| self.parse(key, v)).transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.opt_str(key).map(|v| self.parse(key, v)).transpose()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.opt_str(key)
            .map(|v| self.parse(key, v))
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.opt_str(key)
            .map(|v| self.parse(key, v))
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.require_str(key)?
            .split(',')
            .map(|s| self.parse(key, s.trim()))
            .collect()
    }

    pub fn list_usize(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        self.require_str(key)?
            .split(',')
            .map(|s| self.parse(key, s.trim()))
            .collect()
    }

    pub fn opt_list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        if self.opt_str(key).is_none() {
            return Ok(None);
        }
        self.list_f64(key).map(Some)
    }
}

fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_typed_values_and_comments() {
        let c = Config::from_str_source(
            "# experiment\nmodel.family = gaussian\nmodel.sigma = 1.5\nsim.n_grid = 8, 27,64\nflag = true\n\n",
        )
        .unwrap();
        assert_eq!(c.require_str("model.family").unwrap(), "gaussian");
        assert_eq!(c.require_f64("model.sigma").unwrap(), 1.5);
        assert_eq!(c.list_usize("sim.n_grid").unwrap(), vec![8, 27, 64]);
        assert!(c.bool_or("flag", false).unwrap());
        assert_eq!(c.hash.len(), 16);
        assert_eq!(c.f64_or("missing", 2.0).unwrap(), 2.0);
        assert!(matches!(
            c.require_f64("absent"),
            Err(ConfigError::Missing(_))
        ));
        assert!(matches!(
            c.require_f64("model.family"),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            Config::from_str_source("a = 1\na = 2\n"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Config::from_str_source("just words\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Config::from_str_source(" = 3\n"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::from_str_source("x = 1\n").unwrap();
        let b = Config::from_str_source("x = 2\n").unwrap();
        assert_ne!(a.hash, b.hash);
        let c = Config::from_str_source("x = 1\n").unwrap();
        assert_eq!(a.hash, c.hash);
        assert!(a.hash.chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn infinity_parses_for_barriers() {
        let c = Config::from_str_source("barrier.a = inf\n").unwrap();
        assert_eq!(c.require_f64("barrier.a").unwrap(), f64::INFINITY);
    }
}
