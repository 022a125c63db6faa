mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use coder_core::bench::{
    emit_stats_table, replay_from_dir, run_benchmark, BenchConfig, FailureKind, ProblemCase, ProviderFactory,
    VerdictStatus,
};
use coder_core::llm::{ModelProvider, ModelTurn, Recorder};
use support::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench")
}

fn solution_for(id: &str) -> &'static str {
    match id {
        "queens4" => r#"{"queens": [1, 3, 0, 2]}"#,
        "knapsack" => r#"{"take": [0, 2], "objective": 10}"#,
        "coloring" => r#"{"colors": [0, 1, 0, 1]}"#,
        "triangle" => r#"{"value": 55}"#,
        other => panic!("no scripted solution for {other}"),
    }
}

/// Write the script, run it, read the answer back, stop.
fn scripted_turns(id: &str) -> Vec<ModelTurn> {
    let script = format!("write_file('solution.json', '{}')\n", solution_for(id));
    vec![
        turn(
            "",
            vec![call("w", "write_file", json!({"file_path": "solution.mk", "content": script}))],
            1_200,
            60,
        ),
        turn(
            "",
            vec![call("x", "python_exec", json!({"code": "run_script('solution.mk')"}))],
            1_400,
            20,
        ),
        turn(
            "",
            vec![call("r", "read_file", json!({"file_path": "solution.json"}))],
            1_500,
            15,
        ),
        turn("solution.json is written.", vec![], 1_600, 10),
    ]
}

fn recording_factory(dir: PathBuf) -> ProviderFactory {
    Arc::new(move |case: &ProblemCase| {
        let recorder = Recorder::create(Scripted::new(scripted_turns(&case.id)), &dir.join(format!("{}.jsonl", case.id)))?;
        Ok(Box::new(recorder) as Box<dyn ModelProvider>)
    })
}

fn config(out: &Path, provider: ProviderFactory) -> BenchConfig {
    let mut cfg = BenchConfig::new(out, provider);
    cfg.launch = mock_spec();
    cfg.runner = "run_script('{script}')".into();
    cfg.solution_timeout = Duration::from_secs(10);
    cfg.parallelism = 2;
    cfg
}

#[test]
fn replayed_benchmark_passes_and_corruption_flips_one_verdict() {
    let root = tempfile::tempdir().unwrap();
    let recordings = root.path().join("recordings");

    let recorded = run_benchmark(&fixtures(), &config(&root.path().join("rec-out"), recording_factory(recordings.clone()))).unwrap();
    assert_eq!(recorded.passed(), 4, "{:#?}", recorded.verdicts);

    let out = root.path().join("out");
    let report = run_benchmark(&fixtures(), &config(&out, replay_from_dir(&recordings))).unwrap();
    assert_eq!(report.passed(), 4, "{:#?}", report.verdicts);
    let ids: Vec<_> = report.verdicts.iter().map(|v| v.problem_id.as_str()).collect();
    assert_eq!(ids, ["coloring", "knapsack", "queens4", "triangle"]);
    for s in &report.stats {
        assert_eq!((s.read, s.write, s.exec, s.todo), (1, 1, 1, 0), "{}", s.problem_id);
        assert_eq!((s.input_tokens, s.output_tokens), (5_700, 105));
    }
    let table = emit_stats_table(&report.stats);
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.lines().skip(1).all(|l| l.ends_with("1 1 1 0 6/0")), "{table}");
    assert_eq!(recorded.stats, report.stats);

    report.write(&out).unwrap();
    let verdicts: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts.as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(out.join("stats.txt")).unwrap(), table);
    for id in ids {
        assert!(out.join("transcripts").join(format!("{id}.jsonl")).is_file());
        let work = out.join("work").join(id);
        assert!(work.join("task.md").is_file());
        assert!(!work.join("meta.json").exists(), "private files stay out of the workdir");
        assert!(!work.join("check.py").exists());
        assert!(!work.join("expected.json").exists());
    }

    // Swap two queens: still a permutation, now with a diagonal clash.
    let path = recordings.join("queens4.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("[1, 3, 0, 2]"));
    fs::write(&path, text.replace("[1, 3, 0, 2]", "[1, 3, 2, 0]")).unwrap();

    let flipped = run_benchmark(&fixtures(), &config(&root.path().join("out2"), replay_from_dir(&recordings))).unwrap();
    for (before, after) in report.verdicts.iter().zip(&flipped.verdicts) {
        if before.problem_id == "queens4" {
            assert_eq!(after.status, VerdictStatus::Fail);
            assert_eq!(after.failure, Some(FailureKind::ConstraintViolation), "{}", after.details);
        } else {
            assert_eq!(after, before);
        }
    }
}

#[test]
fn crashing_kernel_and_missing_recording_are_runtime_errors() {
    let root = tempfile::tempdir().unwrap();
    let problems = root.path().join("problems");
    for id in ["crash", "silent"] {
        let dir = problems.join(id);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("task.md"), "do it").unwrap();
        fs::write(dir.join("meta.json"), r#"{"kind": "satisfaction", "solution_script": "solution.mk"}"#).unwrap();
        fs::write(dir.join("check.py"), "import sys\nsys.exit(0)\n").unwrap();
    }
    // `crash` ships a script that kills the kernel when re-run; `silent`
    // has no recording at all.
    fs::write(problems.join("crash/solution.mk"), "%crash\n").unwrap();

    let factory: ProviderFactory = Arc::new(|case: &ProblemCase| {
        if case.id == "silent" {
            return replay_from_dir("/nonexistent")(case);
        }
        Ok(Box::new(Scripted::new(vec![turn("nothing to add", vec![], 1, 1)])) as Box<dyn ModelProvider>)
    });
    let report = run_benchmark(&problems, &config(&root.path().join("out"), factory)).unwrap();
    assert_eq!(report.passed(), 0);
    for v in &report.verdicts {
        assert_eq!(v.failure, Some(FailureKind::RuntimeError), "{}: {}", v.problem_id, v.details);
    }
    assert_eq!(report.stats.len(), 2);
}
