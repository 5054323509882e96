//! Config files and layered option lookup (defaults < config < flags).
//!
//! A config file is either a JSON object or plain text with one
//! `key = value` per line (`#` starts a comment). Keys are flag names;
//! `r_grid` and `r-grid` are the same key. List values are comma-separated
//! strings, or arrays in JSON.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").to_ascii_lowercase().replace('_', "-")
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Self::parse_pairs(text)
        }
    }

    fn parse_json(text: &str) -> Result<Self, String> {
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
        let mut values = BTreeMap::new();
        for (k, v) in obj {
            values.insert(normalize(&k), json_scalar(&v).map_err(|e| format!("key `{k}`: {e}"))?);
        }
        Ok(Self { values })
    }

    fn parse_pairs(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", no + 1))?;
            values.insert(normalize(k), v.trim().trim_matches('"').to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// Flag value if given, else the parsed config value, else `None`.
    pub fn layer<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config value `{key} = {raw}`: {e}")))
            })
            .transpose()
    }

    /// Like [`ConfigMap::layer`] with a built-in default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.layer(flag, key)?.unwrap_or(default))
    }

    /// Boolean switch: set by the flag, or by a truthy config value.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        match self.get(key) {
            None => Ok(false),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(CliError::Usage(format!("config value `{key} = {v}` is not a boolean"))),
            },
        }
    }
}

fn json_scalar(v: &serde_json::Value) -> Result<String, String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::Array(_) | Value::Object(_) => Err("nested values are not supported".to_string()),
                other => json_scalar(other),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.join(",")),
        Value::Null => Err("null is not a value".into()),
        Value::Object(_) => Err("nested objects are not supported".into()),
    }
}

/// Parses a nonempty comma-separated list.
pub fn parse_list<T>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("bad {what} entry `{s}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what} must be nonempty")));
    }
    Ok(items)
}
