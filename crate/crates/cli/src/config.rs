//! Layered JSON configuration: defaults, then a config file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Recursively overlays `top` onto `base`. Objects merge key by key; any other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_file(path: &Path) -> Result<Map<String, Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(format!("config {} must be a JSON object", path.display())),
        Err(e) => Err(format!("config {}: {e}", path.display())),
    }
}

/// Resolves `defaults < file < flags` into `T`. Unknown keys are rejected by `T`'s deserializer.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Map<String, Value>>,
    flags: Map<String, Value>,
) -> Result<T, String> {
    let mut value = serde_json::to_value(defaults).map_err(|e| e.to_string())?;
    if let Some(f) = file {
        merge(&mut value, Value::Object(f));
    }
    merge(&mut value, Value::Object(flags));
    serde_json::from_value(value).map_err(|e| format!("invalid config: {e}"))
}

/// Collects `Some` flag values under their config keys. Dotted keys address nested objects.
#[derive(Default)]
pub struct Flags(pub Map<String, Value>);

impl Flags {
    pub fn set(&mut self, key: &str, value: Option<impl Into<Value>>) -> &mut Self {
        if let Some(v) = value {
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().expect("non-empty key");
            let mut map = &mut self.0;
            for p in parts {
                map = map
                    .entry(p)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("nested flag keys address objects");
            }
            map.insert(last.to_string(), v.into());
        }
        self
    }
}
