//! Flat `key = value` text used for checkpoint manifests and run configs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered string map with typed lookups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
    }

    /// Parses `key` if present.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidConfig(format!("bad value `{raw}` for `{key}`: {e}"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &Manifest) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Manifest {
        let dotted = format!("{prefix}.");
        let mut out = Manifest::new();
        for (k, v) in self.iter() {
            if let Some(rest) = k.strip_prefix(&dotted) {
                out.set(rest, v);
            }
        }
        out
    }

    /// Copies every entry of `other` under `prefix.`.
    pub fn nest(&mut self, prefix: &str, other: &Manifest) {
        for (k, v) in other.iter() {
            self.set(format!("{prefix}.{k}"), v);
        }
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            out.set(k.trim(), v.trim());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_sections() {
        let mut m = Manifest::new();
        m.set("format_version", 1);
        let mut g = Manifest::new();
        g.set("rho", 4);
        m.nest("generator", &g);
        let back = Manifest::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.section("generator").parse::<usize>("rho").unwrap(), Some(4));
        assert!(back.parse::<usize>("missing").unwrap().is_none());
        assert!(Manifest::from_text("nonsense").is_err());
    }
}
