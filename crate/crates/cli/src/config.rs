//! Merging of JSON config sections with command-line flags.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Every problem found while resolving a command's settings.
#[derive(Debug)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.problems.join("; "))
    }
}

impl std::error::Error for ConfigError {}

pub const SECTIONS: [&str; 8] = [
    "saliency",
    "ac-eval",
    "features",
    "train",
    "predict",
    "kernel-verify",
    "bench",
    "split",
];

/// Read a config file and check that it only holds known sections.
pub fn load_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let fail = |m: String| ConfigError { problems: vec![m] };
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| fail(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(fail("config must be a JSON object keyed by command name".into()));
    };
    let unknown: Vec<String> = map
        .keys()
        .filter(|k| !SECTIONS.contains(&k.as_str()))
        .map(|k| format!("{k}: unknown config section"))
        .collect();
    if unknown.is_empty() {
        Ok(map)
    } else {
        Err(ConfigError { problems: unknown })
    }
}

/// Overlay non-null flag values on the config section and deserialize.
///
/// `T` must serialize absent options as `null` so that its field names can be
/// read off `T::default()`.
pub fn resolve<T>(flags: &T, file: Option<&Map<String, Value>>, section: &str) -> Result<T, ConfigError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut problems = Vec::new();
    let mut merged = Map::new();
    let Value::Object(known) = serde_json::to_value(T::default()).expect("settings serialize") else {
        unreachable!("settings are structs");
    };
    match file.and_then(|f| f.get(section)) {
        None => {}
        Some(Value::Object(sec)) => {
            for (k, v) in sec {
                if !known.contains_key(k) {
                    problems.push(format!("{section}.{k}: unknown field"));
                    continue;
                }
                let mut one = Map::new();
                one.insert(k.clone(), v.clone());
                match serde_json::from_value::<T>(Value::Object(one)) {
                    Ok(_) => {
                        merged.insert(k.clone(), v.clone());
                    }
                    Err(e) => problems.push(format!("{section}.{k}: {e}")),
                }
            }
        }
        Some(_) => problems.push(format!("{section}: section must be a JSON object")),
    }
    if let Value::Object(f) = serde_json::to_value(flags).expect("flags serialize") {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    if !problems.is_empty() {
        return Err(ConfigError { problems });
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError {
        problems: vec![format!("{section}: {e}")],
    })
}

/// Collects validation messages for one command.
#[derive(Default)]
pub struct Checks(pub Vec<String>);

impl Checks {
    pub fn require<T>(&mut self, field: &str, v: &Option<T>) {
        if v.is_none() {
            self.0.push(format!("{field}: required"));
        }
    }

    pub fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.0.push(msg.into());
        }
    }

    pub fn file(&mut self, field: &str, p: &Option<std::path::PathBuf>) {
        match p {
            None => self.0.push(format!("{field}: required")),
            Some(p) if !p.is_file() => self.0.push(format!("{field}: file {} does not exist", p.display())),
            _ => {}
        }
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: self.0 })
        }
    }
}
