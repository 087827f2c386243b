//! Canonical JSON rendering.
//!
//! Objects keep their authored key order and are always expanded one key per
//! line; arrays whose elements are all scalars are written inline
//! (`["knowledge"]`), any other array is expanded. Indentation is four spaces.
//! This is the layout used by DSL files, so two documents compare byte-for-byte.

use serde::Serialize;
use serde_json::Value;

const INDENT: &str = "    ";

/// Serializes `value` with the canonical layout.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    Ok(out)
}

fn is_scalar(value: &Value) -> bool {
    !matches!(value, Value::Array(_) | Value::Object(_))
}

fn write_scalar(value: &Value, out: &mut String) {
    // serde_json's compact form is already the canonical scalar rendering.
    out.push_str(&value.to_string());
}

fn push_indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
}

fn write_value(value: &Value, depth: usize, out: &mut String) {
    match value {
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_scalar(item, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                push_indent(depth + 1, out);
                write_value(item, depth + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            push_indent(depth, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            let len = map.len();
            for (i, (key, item)) in map.iter().enumerate() {
                push_indent(depth + 1, out);
                write_scalar(&Value::String(key.clone()), out);
                out.push_str(": ");
                write_value(item, depth + 1, out);
                if i + 1 < len {
                    out.push(',');
                }
                out.push('\n');
            }
            push_indent(depth, out);
            out.push('}');
        }
        scalar => write_scalar(scalar, out),
    }
}
