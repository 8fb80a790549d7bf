//! Canonical JSON encoding shared by every on-disk artifact.
//!
//! Documents are UTF-8, pretty-printed with sorted object keys and a
//! trailing newline so that identical values always produce identical bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, ParseError, Result};

/// Serializes `value` to the canonical sorted-key form.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json::Map is a BTreeMap without the preserve_order feature, so
    // going through Value sorts struct fields as well as map keys.
    let tree = serde_json::to_value(value).map_err(|e| parse_error(None, e.to_string(), None))?;
    let mut out =
        serde_json::to_string_pretty(&tree).map_err(|e| parse_error(None, e.to_string(), None))?;
    out.push('\n');
    Ok(out)
}

pub fn write_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_string(value)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text).map_err(|mut e| {
        e.file = Some(path.to_path_buf());
        Error::Parse(e)
    })
}

/// Parses `text`, reporting the path of the first offending field.
pub fn from_str<T: DeserializeOwned>(text: &str) -> std::result::Result<T, ParseError> {
    let mut de = serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize::<_, T>(&mut de) {
        Ok(v) => Ok(v),
        Err(err) => {
            let path = err.path().to_string();
            let message = err.inner().to_string();
            Err(parse_error(None, message, Some(path)))
        }
    }
}

pub fn from_value<T: DeserializeOwned>(value: serde_json::Value) -> std::result::Result<T, ParseError> {
    match serde_path_to_error::deserialize::<_, T>(value) {
        Ok(v) => Ok(v),
        Err(err) => {
            let path = err.path().to_string();
            let message = err.inner().to_string();
            Err(parse_error(None, message, Some(path)))
        }
    }
}

fn parse_error(file: Option<&Path>, message: String, path: Option<String>) -> ParseError {
    // serde reports a missing field against its parent object, so fold the
    // field name into the path.
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    let field = match (path.filter(|p| p != "."), missing) {
        (Some(p), Some(m)) => Some(format!("{p}.{m}")),
        (None, Some(m)) => Some(m),
        (Some(p), None) => Some(p),
        (None, None) => None,
    };
    ParseError {
        file: file.map(Path::to_path_buf),
        field,
        message,
    }
}
