//! Config file loading and dotted-key overrides.

use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

use crate::scenario::ScenarioSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("config does not match schema after overrides: {0}")]
    Schema(String),
}

/// `key.path=value`. The value is read as JSON when it parses, otherwise as
/// a bare string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
    raw: String,
}

impl FromStr for Override {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix("--").unwrap_or(s);
        let (key, value) =
            body.split_once('=').ok_or_else(|| ConfigError::Override(s.into(), "expected key=value".into()))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(ConfigError::Override(s.into(), "empty key segment".into()));
        }
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
        Ok(Self { path: key.split('.').map(String::from).collect(), value, raw: s.into() })
    }
}

impl Override {
    pub fn apply(&self, root: &mut Value) -> Result<(), ConfigError> {
        let err = |m: String| ConfigError::Override(self.raw.clone(), m);
        let (last, parents) = self.path.split_last().expect("non-empty path");
        let mut node = root;
        for seg in parents {
            node = match node {
                Value::Object(map) => map.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default())),
                Value::Array(items) => {
                    let i: usize = seg.parse().map_err(|_| err(format!("`{seg}` is not an array index")))?;
                    let len = items.len();
                    items.get_mut(i).ok_or_else(|| err(format!("index {i} out of range (len {len})")))?
                }
                other => return Err(err(format!("cannot descend into {other} at `{seg}`"))),
            };
        }
        match node {
            Value::Object(map) => {
                map.insert(last.clone(), self.value.clone());
            }
            Value::Array(items) => {
                let i: usize = last.parse().map_err(|_| err(format!("`{last}` is not an array index")))?;
                let len = items.len();
                *items.get_mut(i).ok_or_else(|| err(format!("index {i} out of range (len {len})")))? =
                    self.value.clone();
            }
            other => return Err(err(format!("cannot set a field on {other}"))),
        }
        Ok(())
    }
}

fn parse_error(path: &str, e: serde_json::Error) -> ConfigError {
    ConfigError::Parse { path: path.into(), line: e.line(), column: e.column(), message: e.to_string() }
}

/// Parses a config document. Syntax and schema errors carry the line and
/// column of the offending input; errors introduced by overrides cannot.
pub fn parse_config(path: &str, text: &str, overrides: &[Override]) -> Result<ScenarioSpec, ConfigError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    if overrides.is_empty() {
        return Ok(spec);
    }
    for o in overrides {
        o.apply(&mut value)?;
    }
    serde_json::from_value(value).map_err(|e| ConfigError::Schema(e.to_string()))
}

pub fn load_config(path: &str, overrides: &[Override]) -> Result<ScenarioSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    parse_config(path, &text, overrides)
}
