//! Flat `key = value` configuration text.
//!
//! ```text
//! # comment
//! n = 3
//! lambdas = 0, 20, 60
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl KeyValueConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(err("invalid key"));
            }
            if v.is_empty() {
                return Err(err("empty value"));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err("duplicate key"));
            }
        }
        Ok(KeyValueConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !valid_key(key) {
            return Err(Error::InvalidParams(format!("invalid config key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Entries of `other` replace entries of `self`.
    pub fn merge(&mut self, other: &KeyValueConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParams(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidParams(format!("config key '{key}': bad item '{}'", s.trim())))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical text, keys sorted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
