//! Request fingerprints for record/replay.
//!
//! A fingerprint is the SHA-256 of a canonical JSON rendering of the model
//! id, the tool schemas and the message history. Canonical means UTF-8,
//! object keys sorted by code point, no insignificant whitespace, and
//! integers written without sign padding or leading zeros. Tool-call
//! argument payloads are parsed and canonicalized too, so two payloads that
//! differ only in key order or spacing hash the same.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ToolSchema;
use crate::session::Message;

pub fn fingerprint(history: &[Message], schemas: &[ToolSchema], model: &str) -> String {
    let messages: Vec<Value> = history.iter().map(message_value).collect();
    let schemas: Vec<Value> = schemas
        .iter()
        .map(|s| {
            json!({
                "name": s.name,
                "description": s.description,
                "parameters": s.parameters,
            })
        })
        .collect();
    let doc = json!({ "model": model, "tools": schemas, "messages": messages });
    hex::encode(Sha256::digest(canonical_json(&doc).as_bytes()))
}

fn message_value(message: &Message) -> Value {
    let calls: Vec<Value> = message
        .tool_calls
        .iter()
        .map(|c| {
            let args = serde_json::from_str::<Value>(&c.arguments)
                .unwrap_or_else(|_| Value::String(c.arguments.clone()));
            json!({ "id": c.id, "name": c.name, "arguments": args })
        })
        .collect();
    json!({
        "role": message.role,
        "content": message.content,
        "tool_calls": calls,
        "tool_call_id": message.tool_call_id,
    })
}

/// Serializes `value` in canonical form.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (key, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(val, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        // serde_json renders scalars compactly; integers never carry a `+`
        // or leading zeros.
        scalar => out.push_str(&scalar.to_string()),
    }
}
