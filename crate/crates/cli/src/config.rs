//! JSON config loading with `flags > file > defaults` precedence.
//!
//! Defaults are serialised to a JSON tree, the file is merged over it key by
//! key (nested objects merge, everything else replaces), and the result is
//! deserialised. Flags are applied to the typed value afterwards.

use std::path::Path;

use mdd_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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

/// `defaults` overlaid with the JSON object in `path`, if given.
pub fn load<T: Serialize + DeserializeOwned>(defaults: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(defaults) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let overlay: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !overlay.is_object() {
        return Err(Error::Config(format!("{}: top level must be a JSON object", path.display())));
    }
    let mut tree = serde_json::to_value(defaults)?;
    merge(&mut tree, overlay);
    serde_json::from_value(tree).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
