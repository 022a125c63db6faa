mod support;

use std::fs;
use std::sync::atomic::Ordering;

use serde_json::json;

use coder_core::llm::{build_provider, read_recording, LiveConfig, ProviderMode};
use coder_core::session::{comparison_form, read_transcript, EventKind, SessionStatus};
use support::*;

fn replay(recording: &std::path::Path) -> Box<dyn coder_core::llm::ModelProvider> {
    let transport = counting_transport();
    build_provider(&ProviderMode::Replay(recording.to_path_buf()), LiveConfig::default(), transport).unwrap()
}

#[test]
fn two_turn_write_then_answer() {
    let root = tempfile::tempdir().unwrap();
    let recording = root.path().join("two.jsonl");
    let turns = vec![
        turn(
            "",
            vec![call("c1", "write_file", json!({"file_path": "out/answer.txt", "content": "forty-two\n"}))],
            500,
            30,
        ),
        turn("Wrote out/answer.txt.", vec![], 600, 10),
    ];
    let recorded = record(root.path(), turns, "write the answer", &recording);
    assert_eq!(recorded.status, SessionStatus::Completed);
    assert_eq!(read_recording(&recording).unwrap().len(), 2);

    let workdir = root.path().join("replay");
    fs::create_dir_all(&workdir).unwrap();
    let out = run_with_mock(&session_config(&workdir, "write the answer"), replay(&recording).as_ref());
    assert_eq!(out.status, SessionStatus::Completed);
    assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    assert_eq!(fs::read_to_string(workdir.join("out/answer.txt")).unwrap(), "forty-two\n");
    assert_eq!(out.final_text, "Wrote out/answer.txt.");
}

#[test]
fn first_turn_without_calls_is_one_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let workdir = root.path().join("w");
    fs::create_dir_all(&workdir).unwrap();
    let provider = Scripted::new(vec![turn("Nothing to do.", vec![], 10, 1), turn("unused", vec![], 1, 1)]);
    let out = run_with_mock(&session_config(&workdir, "say hi"), &provider);
    assert_eq!(out.status, SessionStatus::Completed);
    assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn iteration_limit_of_one() {
    let root = tempfile::tempdir().unwrap();
    let recording = root.path().join("g.jsonl");
    record(root.path(), golden_turns(), GOLDEN_TASK, &recording);
    let workdir = root.path().join("limited");
    fs::create_dir_all(&workdir).unwrap();
    let mut cfg = session_config(&workdir, GOLDEN_TASK);
    cfg.max_iterations = 1;
    let out = run_with_mock(&cfg, replay(&recording).as_ref());
    assert_eq!(out.status, SessionStatus::IterationLimit);
    assert_eq!(out.iterations, 1);
    assert_eq!(out.usage.calls("todo_write"), 1);
    assert_eq!(out.warnings.len(), 1, "unused replay entries are reported");
}

#[test]
fn diverging_request_stops_the_session() {
    let root = tempfile::tempdir().unwrap();
    let recording = root.path().join("g.jsonl");
    record(root.path(), golden_turns(), GOLDEN_TASK, &recording);
    let workdir = root.path().join("other-task");
    fs::create_dir_all(&workdir).unwrap();
    let out = run_with_mock(&session_config(&workdir, "a different task"), replay(&recording).as_ref());
    assert_eq!(out.status, SessionStatus::ProviderError);
    assert!(out.error.as_deref().unwrap().contains("diverged at exchange 0"));
}

#[test]
fn replay_divergence_after_workspace_change() {
    // Same task, but the workdir starts with a file that changes what
    // list_files reports: the replay must notice on the following request.
    let root = tempfile::tempdir().unwrap();
    let recording = root.path().join("g.jsonl");
    record(root.path(), golden_turns(), GOLDEN_TASK, &recording);
    let workdir = root.path().join("dirty");
    fs::create_dir_all(&workdir).unwrap();
    fs::write(workdir.join("stray.txt"), "x").unwrap();
    let out = run_with_mock(&session_config(&workdir, GOLDEN_TASK), replay(&recording).as_ref());
    assert_eq!(out.status, SessionStatus::ProviderError);
    assert!(out.error.as_deref().unwrap().contains("diverged at exchange 4"));
}

#[test]
fn golden_session_transcript_shape() {
    let root = tempfile::tempdir().unwrap();
    let recording = root.path().join("g.jsonl");
    let out = record(root.path(), golden_turns(), GOLDEN_TASK, &recording);
    assert_eq!(out.status, SessionStatus::Completed);
    assert_eq!(out.final_text, "result.txt contains 55, the sum of 1..10.");
    assert_eq!(fs::read_to_string(root.path().join("record/result.txt")).unwrap(), "55");

    let events = read_transcript(&out.transcript_path).unwrap();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64);
    }
    let calls = events.iter().filter(|e| e.kind == EventKind::ToolCall).count();
    let results = events.iter().filter(|e| e.kind == EventKind::ToolResult).count();
    assert_eq!(calls, 5);
    assert_eq!(results, calls);
    assert_eq!(events.last().unwrap().kind, EventKind::Outcome);

    let run = events
        .iter()
        .find(|e| e.kind == EventKind::ToolResult && e.payload["tool"] == "python_exec")
        .unwrap();
    assert_eq!(run.payload["success"], true);
    assert_eq!(run.payload["payload"], "[result]\n55");

    let turn_usage: u64 = events
        .iter()
        .filter(|e| e.kind == EventKind::ModelTurn)
        .map(|e| e.usage.unwrap().input_tokens)
        .sum();
    assert_eq!(turn_usage, out.usage.input_tokens);
    assert_eq!(comparison_form(&events).len(), events.len());
}

#[test]
fn history_is_append_only_across_requests() {
    use coder_core::llm::{CompletionRequest, ModelProvider, ModelTurn, ProviderError};
    use coder_core::session::Message;
    use std::sync::Mutex;

    struct Watch {
        inner: Scripted,
        seen: Mutex<Vec<Vec<Message>>>,
    }
    impl ModelProvider for Watch {
        fn complete(&self, r: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
            self.seen.lock().unwrap().push(r.history.to_vec());
            self.inner.complete(r)
        }
    }

    let root = tempfile::tempdir().unwrap();
    let workdir = root.path().join("w");
    fs::create_dir_all(&workdir).unwrap();
    let watch = Watch {
        inner: Scripted::new(golden_turns()),
        seen: Mutex::new(Vec::new()),
    };
    let out = run_with_mock(&session_config(&workdir, GOLDEN_TASK), &watch);
    assert_eq!(out.status, SessionStatus::Completed);
    let seen = watch.seen.into_inner().unwrap();
    assert_eq!(seen.len(), 5);
    for pair in seen.windows(2) {
        assert!(pair[1].len() > pair[0].len());
        assert_eq!(&pair[1][..pair[0].len()], &pair[0][..]);
    }
}
