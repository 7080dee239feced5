//! Plain-text `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Blank lines and lines starting with `#` are ignored. A key may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    "expected `key = value`",
                )
            })?;
            if cfg.values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "duplicate key"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override, replacing any file value.
    pub fn set_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair)
            .ok_or_else(|| Error::config(pair, "override must be `key=value`"))?;
        self.values.insert(k.to_string(), v.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(v) => parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.values.get(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(v) => parse_value(key, v),
            None => Err(Error::config(key, "required key is missing")),
        }
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.values.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_value(key, s))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Rejects keys outside `allowed`; an entry ending in `.*` admits a prefix.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            let ok = allowed.iter().any(|a| match a.strip_suffix('*') {
                Some(prefix) => k.starts_with(prefix),
                None => a == k,
            });
            if !ok {
                return Err(Error::config(k, "unknown key"));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k, v.trim()))
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse {v:?}: {e}")))
}
