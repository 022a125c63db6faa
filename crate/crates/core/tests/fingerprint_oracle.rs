//! The canonical JSON behind request fingerprints, checked against Python's
//! `json.dumps(sort_keys=True, separators=(",", ":"), ensure_ascii=False)`.

use std::io::Write;
use std::process::{Command, Stdio};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use coder_core::llm::{canonical_json, fingerprint, ToolCall, ToolSchema};
use coder_core::session::Message;

fn python_available() -> bool {
    Command::new("python3").arg("-c").arg("import json").output().map(|o| o.status.success()).unwrap_or(false)
}

/// Canonicalizes each input line in one python3 process.
fn python_canonical(docs: &[String]) -> Vec<String> {
    let script = "import json, sys\nfor line in sys.stdin:\n    v = json.loads(line)\n    sys.stdout.write(json.dumps(v, sort_keys=True, separators=(',', ':'), ensure_ascii=False) + '\\n')\n";
    let mut child = Command::new("python3")
        .args(["-c", script])
        .env("PYTHONIOENCODING", "utf-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    for d in docs {
        writeln!(stdin, "{d}").unwrap();
    }
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap().lines().map(str::to_string).collect()
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|n| json!(n)),
        any::<u64>().prop_map(|n| json!(n)),
        "[a-zA-Z0-9 _\\-\"\\\\/\n\t\u{1}\u{7f}é✓𝄞]{0,12}".prop_map(Value::String),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::btree_map("[a-zA-Z_é✓ Z0-9]{0,6}", inner, 0..6)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

#[test]
fn canonical_form_matches_python() {
    if !python_available() {
        eprintln!("skipped: no python3");
        return;
    }
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(1));
    let strategy = prop::collection::vec(json_value(), 300);
    let docs = strategy.new_tree(&mut runner).unwrap().current();
    let lines: Vec<String> = docs.iter().map(|d| serde_json::to_string_pretty(d).unwrap().replace('\n', " ")).collect();
    let expected = python_canonical(&lines);
    assert_eq!(expected.len(), docs.len());
    for (doc, want) in docs.iter().zip(&expected) {
        assert_eq!(&canonical_json(doc), want, "for {doc}");
    }
}

#[test]
fn fingerprint_is_sha256_of_the_canonical_request() {
    let history = vec![
        Message::system("sys"),
        Message::user("task"),
    ];
    let schemas = vec![ToolSchema {
        name: "read_file".into(),
        description: "reads".into(),
        parameters: json!({"type": "object", "properties": {"file_path": {"type": "string"}}}),
    }];
    let doc = json!({
        "model": "m",
        "tools": [{"name": "read_file", "description": "reads",
                   "parameters": {"type": "object", "properties": {"file_path": {"type": "string"}}}}],
        "messages": [
            {"role": "system", "content": "sys", "tool_calls": [], "tool_call_id": null},
            {"role": "user", "content": "task", "tool_calls": [], "tool_call_id": null},
        ],
    });
    let want = hex::encode(Sha256::digest(canonical_json(&doc).as_bytes()));
    assert_eq!(fingerprint(&history, &schemas, "m"), want);
}

proptest! {
    #[test]
    fn argument_formatting_does_not_change_the_fingerprint(v in json_value(), pretty in any::<bool>()) {
        let args = json!({"payload": v});
        let text = if pretty { serde_json::to_string_pretty(&args).unwrap() } else { args.to_string() };
        let call = |arguments: String| Message::assistant("", vec![ToolCall { id: "c".into(), name: "t".into(), arguments }]);
        let a = fingerprint(&[Message::user("u"), call(text)], &[], "m");
        let b = fingerprint(&[Message::user("u"), call(args.to_string())], &[], "m");
        prop_assert_eq!(a, b);
    }

    #[test]
    fn any_content_change_changes_the_fingerprint(a in ".{0,20}", b in ".{0,20}") {
        prop_assume!(a != b);
        prop_assert_ne!(
            fingerprint(&[Message::user(&a)], &[], "m"),
            fingerprint(&[Message::user(&b)], &[], "m")
        );
    }
}
