//! Flag values from an optional JSON config file, with explicit flags on top.

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{Map, Value};

use crate::output::CliError;

/// Keys of a config object. A command reads all its keys first and then
/// calls [`Layered::finish`], which rejects keys nobody asked for.
#[derive(Debug, Default)]
pub struct Layered {
    file: Map<String, Value>,
    used: BTreeSet<String>,
}

impl Layered {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(file)) => Ok(Layered { file, used: BTreeSet::new() }),
            Ok(_) => Err(CliError::Usage("config must be a JSON object".into())),
            Err(e) => Err(CliError::Usage(format!("config is not valid JSON: {e}"))),
        }
    }

    fn raw(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        self.file.get(key).cloned()
    }

    /// The flag if given, else the file value, else `None`.
    pub fn opt<T: serde::de::DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let from_file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}` has the wrong type: {v}"))),
        }
    }

    pub fn get<T: serde::de::DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    /// A boolean switch: set by the flag or by `true` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        Ok(flag || self.opt::<bool>(key, None)?.unwrap_or(false))
    }

    /// Rational-valued keys accept strings (`"5/2"`) or JSON numbers.
    pub fn text(&mut self, key: &str, flag: Option<String>) -> Result<Option<String>, CliError> {
        let from_file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(v) => Err(CliError::Usage(format!("config key `{key}` has the wrong type: {v}"))),
        }
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            Err(CliError::Usage(format!("unknown config key(s): {}", list.join(", "))))
        }
    }
}
