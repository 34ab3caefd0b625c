//! `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are the long CLI flag names
//! without dashes (`problem`, `n`, `epsilon`, ...). Values are kept as strings;
//! callers parse them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", line_no + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", line_no + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{key}`", line_no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parse `key` if present.
    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse().map_err(|e| Error::Parse(format!("`{key}`: {e}"))))
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = Config::parse("# sweep\nproblem = laplace\nn=256 # grid\n\nepsilon = 1e-7\n").unwrap();
        assert_eq!(c.get("problem"), Some("laplace"));
        assert_eq!(c.parsed::<usize>("n").unwrap(), Some(256));
        assert_eq!(c.parsed::<f64>("epsilon").unwrap(), Some(1e-7));
        assert_eq!(c.parsed::<usize>("seed").unwrap(), None);
        assert!(c.parsed::<usize>("problem").is_err());
        assert!(Config::parse("n 3").is_err());
        assert!(Config::parse("n=1\nn=2").is_err());
        assert!(Config::parse("=2").is_err());
    }
}
