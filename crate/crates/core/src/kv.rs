//! Flat `key=value` text files, used for sequence metadata, scene specs,
//! run configs and metric reports.
//!
//! One entry per line. Blank lines and lines starting with `#` are skipped.
//! Keys are unique; output is written in sorted key order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key=value`")]
    MissingSeparator { line: usize },
    #[error("line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(KvError::MissingSeparator { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::EmptyKey { line: i + 1 });
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(KvError::DuplicateKey {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(KvMap { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Copies every entry of `other` over this map.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key)
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.parsed(key)?.unwrap_or(default))
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
}

/// Parses a comma-separated list such as `0.1,0.2`.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, KvError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| KvError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        })
        .collect()
}

pub fn format_list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_write() {
        let m = KvMap::parse("# comment\nb = 2\n\na=x=y\n").unwrap();
        assert_eq!(m.get("a"), Some("x=y"));
        assert_eq!(m.parsed::<u32>("b").unwrap(), Some(2));
        assert_eq!(m.to_text(), "a=x=y\nb=2\n");
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            KvMap::parse("a=1\nnope"),
            Err(KvError::MissingSeparator { line: 2 })
        );
        assert_eq!(KvMap::parse("=1"), Err(KvError::EmptyKey { line: 1 }));
        assert!(matches!(
            KvMap::parse("a=1\na=2"),
            Err(KvError::DuplicateKey { line: 2, .. })
        ));
        let m = KvMap::parse("a=zz").unwrap();
        assert!(m.parsed::<f64>("a").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(
            parse_list::<f64>("g", "0.5, 1,2").unwrap(),
            vec![0.5, 1.0, 2.0]
        );
        assert!(parse_list::<f64>("g", "0.5,,1").is_err());
        assert_eq!(format_list(&[0.25, 1.0]), "0.25,1");
    }
}
