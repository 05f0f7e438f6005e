//! Flat `key = value` configuration files.
//!
//! Every configuration surface (scene/task, noise, training, rollout,
//! retrieval, encoder) uses the same text format: one `key = value` pair per
//! line, `#` starts a comment, blank lines are ignored. Keys are unique within
//! a file. Typed configs implement [`ConfigKeys`] and reject unknown keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("io: {0}")]
    Io(String),
}

/// Parsed key/value pairs in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if entries.iter().any(|(k, _)| k == key) {
                return Err(ConfigError::Duplicate {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        let key = key.into();
        self.entries.retain(|(k, _)| *k != key);
        self.entries.push((key, value.to_string()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies every pair to `target`, failing on the first unknown key.
    pub fn apply_to<T: ConfigKeys>(&self, target: &mut T) -> Result<(), ConfigError> {
        for (k, v) in self.iter() {
            if !target.set(k, v)? {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
        }
        target.validate()
    }

    /// Like [`apply_to`](Self::apply_to) but silently skips keys the target
    /// does not know. Used when one file carries several config groups.
    pub fn apply_known<T: ConfigKeys>(&self, target: &mut T) -> Result<(), ConfigError> {
        for (k, v) in self.iter() {
            target.set(k, v)?;
        }
        target.validate()
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// A typed configuration that can be populated from [`KeyValues`].
pub trait ConfigKeys: Default {
    /// Sets one key. Returns `Ok(false)` when the key is not recognised.
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError>;

    /// Writes every key back out, so that `from_kv(to_kv(c)) == c`.
    fn to_kv(&self) -> KeyValues;

    fn validate(&self) -> Result<(), ConfigError> {
        Ok(())
    }

    fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        kv.apply_to(&mut c)?;
        Ok(c)
    }

    fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

/// Implements [`ConfigKeys`] for a struct whose keys are its field names and
/// whose field types implement `FromStr + Display`.
#[macro_export]
macro_rules! config_keys {
    ($ty:ty, [$($field:ident),* $(,)?] $(, validate = $validate:path)?) => {
        impl $crate::config::ConfigKeys for $ty {
            fn set(&mut self, key: &str, value: &str) -> Result<bool, $crate::config::ConfigError> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::config::parse_value(key, value)?;
                        Ok(true)
                    })*
                    _ => Ok(false),
                }
            }

            fn to_kv(&self) -> $crate::config::KeyValues {
                let mut kv = $crate::config::KeyValues::default();
                $(kv.push(stringify!($field), &self.$field);)*
                kv
            }

            $(fn validate(&self) -> Result<(), $crate::config::ConfigError> {
                $validate(self)
            })?
        }
    };
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Parses a comma separated list, e.g. `25, 35, 50`.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect()
}

pub fn format_list<T: fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}
