use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{format_hex, parse_hex};

/// Ordered flat `key=value` document. Blank lines and `#` comments are
/// skipped when parsing; keys must be unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(format!("line {}", i + 1), "expected key=value"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::malformed(format!("line {}", i + 1), "empty key"));
            }
            if kv.get(k).is_some() {
                return Err(Error::malformed(format!("line {}", i + 1), format!("duplicate key {k:?}")));
            }
            kv.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn set_hex<T: Scalar>(&mut self, key: impl Into<String>, x: T) {
        self.set(key, format_hex(x.as_f64()));
    }

    pub fn set_hex_list<T: Scalar>(&mut self, key: impl Into<String>, xs: &[T]) {
        let joined = xs
            .iter()
            .map(|x| format_hex(x.as_f64()))
            .collect::<Vec<_>>()
            .join(" ");
        self.set(key, joined);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::malformed(format!("key {key:?}"), "missing"))
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::malformed(format!("key {key:?}"), format!("cannot parse {raw:?}")))
    }

    pub fn parse_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        if self.contains(key) {
            self.parse_value(key)
        } else {
            Ok(default)
        }
    }

    pub fn hex<T: Scalar>(&self, key: &str) -> Result<T> {
        let x = parse_hex(self.require(key)?)?;
        Ok(T::lit(x))
    }

    pub fn hex_list<T: Scalar>(&self, key: &str, expected_len: usize) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        let xs = raw
            .split_whitespace()
            .map(|t| parse_hex(t).map(T::lit))
            .collect::<Result<Vec<T>>>()?;
        if xs.len() != expected_len {
            return Err(Error::malformed(
                format!("key {key:?}"),
                format!("expected {expected_len} values, found {}", xs.len()),
            ));
        }
        Ok(xs)
    }

    /// Keys starting with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Appends every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.set(format!("{prefix}{k}"), v);
        }
    }
}
