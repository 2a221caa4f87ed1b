//! Flat `key = value` config files: one pair per line, `#` comments.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::ConfigError;

pub(crate) struct KvFile {
    pub path: String,
    pairs: BTreeMap<String, String>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pairs = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::BadValue {
                    path: path.display().to_string(),
                    key: line.to_string(),
                    msg: "expected `key = value`".to_string(),
                });
            };
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvFile {
            path: path.display().to_string(),
            pairs,
            consumed: Default::default(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.pairs.get(key).map(String::as_str);
        if v.is_some() {
            self.consumed.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::MissingKey {
            path: self.path.clone(),
            key: key.to_string(),
        })
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::BadValue {
                path: self.path.clone(),
                key: key.to_string(),
                msg: e.to_string(),
            }),
        }
    }

    pub fn parse_bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "on" | "1" | "yes") => Ok(true),
            Some("false" | "off" | "0" | "no") => Ok(false),
            Some(v) => Err(ConfigError::BadValue {
                path: self.path.clone(),
                key: key.to_string(),
                msg: format!("expected a boolean, got `{v}`"),
            }),
        }
    }

    /// Error on any key no `get` ever touched, to catch typos.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        for key in self.pairs.keys() {
            if !consumed.contains(key) {
                return Err(ConfigError::UnknownKey {
                    path: self.path.clone(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}
