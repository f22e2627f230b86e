//! JSON helpers. Output is UTF-8 with keys sorted.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;

pub fn to_sorted_string<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Map is a BTreeMap here, so going through Value sorts keys.
    let v = serde_json::to_value(value).map_err(|e| Error::json("serialize", e))?;
    serde_json::to_string_pretty(&v).map_err(|e| Error::json("serialize", e))
}

pub fn write_sorted<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_sorted_string(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}
