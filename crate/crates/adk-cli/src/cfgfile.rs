//! Optional `key=value` run-configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Every
//! command consumes exactly the keys it documents, command-line flags
//! override file values, and keys nothing consumed are hard errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub struct FileCfg {
    path: String,
    entries: BTreeMap<String, String>,
}

impl FileCfg {
    /// Load `path` if given; `None` behaves as an empty file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileCfg {
                path: String::new(),
                entries: BTreeMap::new(),
            });
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected key=value, got `{raw}`",
                    path.display(),
                    lineno + 1
                );
            };
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("{}:{}: duplicate key `{key}`", path.display(), lineno + 1);
            }
        }
        Ok(FileCfg {
            path: path.display().to_string(),
            entries,
        })
    }

    /// Parsed value for `key`, if the file provides one.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("{}: key `{key}`: invalid value `{v}`: {e}", self.path)),
        }
    }

    /// Hard-errors on any key no documented flag consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(|s| s.as_str()).collect();
        bail!("{}: unknown config key(s): {}", self.path, keys.join(", "));
    }
}

/// Flag value, else config-file value, else the built-in default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value, else config-file value, for parameters with no default.
pub fn resolve_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
