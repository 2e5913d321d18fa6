//! Plain-text `key = value` configuration files.
//!
//! Used by the arena configuration and the ground-truth model spec read by
//! `gen`. Blank lines and lines starting with `#` are ignored; keys may be
//! dotted (`models.alpha.weight`). Values are taken verbatim after trimming,
//! with one layer of matching double quotes removed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Parsed key-value pairs in file order, with source line numbers.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            let value = unquote(value.trim());
            if entries
                .insert(key.to_string(), (line, value.to_string()))
                .is_some()
            {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Distinct `<name>` segments of keys shaped `<prefix>.<name>.<field>`,
    /// in order of first appearance in the file.
    pub fn groups(&self, prefix: &str) -> Vec<String> {
        let mut found: Vec<(usize, String)> = Vec::new();
        let dotted = format!("{prefix}.");
        for (key, (line, _)) in &self.entries {
            if let Some(rest) = key.strip_prefix(&dotted) {
                if let Some((name, _field)) = rest.rsplit_once('.') {
                    match found.iter_mut().find(|(_, n)| n == name) {
                        Some(slot) => slot.0 = slot.0.min(*line),
                        None => found.push((*line, name.to_string())),
                    }
                }
            }
        }
        found.sort();
        found.into_iter().map(|(_, n)| n).collect()
    }

    /// Entries shaped `<prefix>.<name>` (one level), in file order.
    pub fn leaves(&self, prefix: &str) -> Vec<(String, String)> {
        let dotted = format!("{prefix}.");
        let mut found: Vec<(usize, String, String)> = self
            .entries
            .iter()
            .filter_map(|(key, (line, value))| {
                key.strip_prefix(&dotted)
                    .filter(|rest| !rest.contains('.'))
                    .map(|rest| (*line, rest.to_string(), value.clone()))
            })
            .collect();
        found.sort();
        found.into_iter().map(|(_, k, v)| (k, v)).collect()
    }

    /// Rejects keys not accepted by `allowed`.
    pub fn check_keys(&self, allowed: impl Fn(&str) -> bool) -> Result<(), ConfigError> {
        match self.keys().find(|k| !allowed(k)) {
            Some(k) => Err(ConfigError::Unknown(k.to_string())),
            None => Ok(()),
        }
    }
}

fn unquote(value: &str) -> &str {
    if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
        &value[1..value.len() - 1]
    } else {
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_groups_and_values() {
        let kv = KeyValues::parse(
            "# arena\nseed = 7\nmodels.b.weight = 2\nmodels.a.corpus = \"a b.txt\"\nmodels.b.corpus = b.txt\nprompt.x = hi there\n",
        )
        .unwrap();
        assert_eq!(kv.parsed::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.get("models.a.corpus"), Some("a b.txt"));
        assert_eq!(kv.groups("models"), vec!["b", "a"]);
        assert_eq!(kv.leaves("prompt"), vec![("x".into(), "hi there".into())]);
        assert!(kv.parsed::<f64>("models.a.corpus").is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(
            KeyValues::parse("a = 1\nnot a pair\n").unwrap_err(),
            ConfigError::Syntax {
                line: 2,
                text: "not a pair".into()
            }
        );
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2").unwrap_err(),
            ConfigError::Duplicate { line: 2, .. }
        ));
    }
}
