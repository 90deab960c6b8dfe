//! Canonical record codec: one JSON object per line.
//!
//! Strict mode rejects fields the schema does not know; lenient mode drops
//! them. Decoding always reports the offending line and dotted field path.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::Validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("line {line}: field `{field}`: {message}")]
    Parse { line: usize, field: String, message: String },
    #[error("line {line}: invalid record: {}", violations.join("; "))]
    Invalid { line: usize, violations: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CodecError {
    pub fn field(&self) -> Option<&str> {
        match self {
            CodecError::Parse { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Serializes one record as a single canonical JSON line (no newline).
pub fn encode<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("domain records always serialize")
}

/// Decodes one record. `line` is only used for error locations.
pub fn decode<T: DeserializeOwned + Serialize>(text: &str, line: usize, mode: SchemaMode) -> Result<T, CodecError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| CodecError::Parse {
        line,
        field: "$".to_string(),
        message: e.to_string(),
    })?;
    decode_value(&raw, line, mode)
}

pub fn decode_value<T: DeserializeOwned + Serialize>(raw: &Value, line: usize, mode: SchemaMode) -> Result<T, CodecError> {
    let value: T = serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        CodecError::Parse { line, field: field_path(&path, &message), message }
    })?;
    if mode == SchemaMode::Strict {
        let known = serde_json::to_value(&value).expect("domain records always serialize");
        if let Some(extra) = first_unknown_field(raw, &known, String::new()) {
            return Err(CodecError::Parse { line, field: extra, message: "unknown field".to_string() });
        }
    }
    Ok(value)
}

/// Decode then enforce the type's invariants.
pub fn decode_validated<T>(text: &str, line: usize, mode: SchemaMode) -> Result<T, CodecError>
where
    T: DeserializeOwned + Serialize + Validate,
{
    let value: T = decode(text, line, mode)?;
    let violations = value.validate();
    if violations.is_empty() {
        Ok(value)
    } else {
        Err(CodecError::Invalid { line, violations })
    }
}

// serde reports a missing field against its parent path; fold the field name in.
fn field_path(path: &str, message: &str) -> String {
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    match (path, missing) {
        (".", Some(f)) | ("", Some(f)) => f.to_string(),
        (p, Some(f)) => format!("{p}.{f}"),
        (".", None) | ("", None) => "$".to_string(),
        (p, None) => p.to_string(),
    }
}

fn first_unknown_field(raw: &Value, known: &Value, prefix: String) -> Option<String> {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match (raw, known) {
        (Value::Object(r), Value::Object(k)) => {
            for (key, rv) in r {
                match k.get(key) {
                    None => return Some(join(key)),
                    Some(kv) => {
                        if let Some(found) = first_unknown_field(rv, kv, join(key)) {
                            return Some(found);
                        }
                    }
                }
            }
            None
        }
        (Value::Array(r), Value::Array(k)) => r
            .iter()
            .zip(k)
            .enumerate()
            .find_map(|(i, (rv, kv))| first_unknown_field(rv, kv, format!("{prefix}[{i}]"))),
        _ => None,
    }
}

pub fn read_jsonl<T: DeserializeOwned + Serialize>(path: &Path, mode: SchemaMode) -> Result<Vec<T>, CodecError> {
    let io_err = |source| CodecError::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode(&line, i + 1, mode)?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<usize, CodecError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |source| CodecError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut n = 0;
    for r in records {
        writeln!(w, "{}", encode(r)).map_err(io_err)?;
        n += 1;
    }
    w.flush().map_err(io_err)?;
    Ok(n)
}

/// Pretty JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CodecError> {
    let io_err = |source| CodecError::Io { path: path.display().to_string(), source };
    let mut text = serde_json::to_string_pretty(value).expect("documents always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err)
}

pub fn read_json<T: DeserializeOwned + Serialize>(path: &Path, mode: SchemaMode) -> Result<T, CodecError> {
    let text = std::fs::read_to_string(path).map_err(|source| CodecError::Io { path: path.display().to_string(), source })?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| CodecError::Parse {
        line: e.line(),
        field: "$".to_string(),
        message: e.to_string(),
    })?;
    decode_value(&raw, 1, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, BBox, Point, Role, UiElement};

    #[test]
    fn click_round_trips() {
        let a = Action::Click { point: Point::new(0.5, 0.5) };
        let text = encode(&a);
        assert_eq!(text, r#"{"type":"click","point":{"u":0.5,"v":0.5}}"#);
        let back: Action = decode(&text, 1, SchemaMode::Strict).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn missing_tag_names_action_type() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct Wrapper {
            action: Action,
        }
        let err = decode::<Wrapper>(r#"{"action":{"point":{"u":0.1,"v":0.1}}}"#, 3, SchemaMode::Lenient)
            .err()
            .unwrap();
        assert_eq!(err.field(), Some("action.type"));
        assert!(err.to_string().starts_with("line 3:"));
    }

    #[test]
    fn strict_rejects_unknown_fields_lenient_ignores() {
        let text = r#"{"element_id":"e","box":{"x0":0.1,"y0":0.1,"x1":0.2,"y1":0.2,"z":1},"role":"button","text":null,"interactive":true}"#;
        let err = decode::<UiElement>(text, 1, SchemaMode::Strict).err().unwrap();
        assert_eq!(err.field(), Some("box.z"));
        let ok: UiElement = decode(text, 1, SchemaMode::Lenient).unwrap();
        assert_eq!(ok.role, Role::Button);
        assert_eq!(ok.bbox, BBox::new(0.1, 0.1, 0.2, 0.2));
    }

    #[test]
    fn validated_decode_rejects_inverted_box() {
        let text = r#"{"element_id":"e","box":{"x0":0.4,"y0":0.3,"x1":0.2,"y1":0.2},"role":"icon","text":null,"interactive":false}"#;
        match decode_validated::<UiElement>(text, 7, SchemaMode::Strict) {
            Err(CodecError::Invalid { line, violations }) => {
                assert_eq!(line, 7);
                assert_eq!(violations.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = decode::<Action>("{not json", 2, SchemaMode::Lenient).err().unwrap();
        assert!(matches!(err, CodecError::Parse { line: 2, .. }));
    }
}
