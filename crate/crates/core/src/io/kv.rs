//! Line-based `key = value` text with `[section]` headers. Used for the run
//! configuration, normalization statistics, and geometry sidecars.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Parsed sectioned key-value file. Sections and keys keep insertion order
/// irrelevant: serialization is sorted, so echoes are canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = KvFile::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::config(
                            format!("line {}", lineno + 1),
                            format!("malformed section header '{raw}'"),
                        )
                    })?
                    .trim();
                section = name.to_string();
                out.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected 'key = value', got '{raw}'"),
                )
            })?;
            if section.is_empty() {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    "key before any [section] header",
                ));
            }
            out.sections
                .get_mut(&section)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, String>)> {
        self.sections.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn take_keys(&self, section: &str) -> Vec<(String, String)> {
        self.sections
            .get(section)
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default()
    }

    pub fn parse_field<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::config(
                    format!("{section}.{key}"),
                    format!("cannot parse '{raw}'"),
                )
            }),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "[a]\nx = 1\ny = hello world\n\n[b]\nz = 2.5e-3\n";
        let kv = KvFile::parse(text).unwrap();
        assert_eq!(kv.get("a", "x"), Some("1"));
        assert_eq!(kv.get("a", "y"), Some("hello world"));
        assert_eq!(kv.parse_field::<f64>("b", "z").unwrap(), Some(2.5e-3));
        let again = KvFile::parse(&kv.to_text()).unwrap();
        assert_eq!(kv, again);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let kv = KvFile::parse("[s]\n# comment\nk = v # trailing\n\n").unwrap();
        assert_eq!(kv.get("s", "k"), Some("v"));
    }

    #[test]
    fn errors_name_the_line() {
        let err = KvFile::parse("[s]\nnonsense\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = KvFile::parse("orphan = 1\n").unwrap_err().to_string();
        assert!(err.contains("section"), "{err}");
    }

    #[test]
    fn full_precision_floats_roundtrip() {
        let v = 4.035829765375675e-5_f64;
        let mut kv = KvFile::new();
        kv.set("s", "x", format!("{v:.17e}"));
        let back: f64 = kv.parse_field("s", "x").unwrap().unwrap();
        assert_eq!(back, v);
    }
}
