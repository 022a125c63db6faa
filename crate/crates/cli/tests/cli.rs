use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use serde_json::json;

use coder_cli::{parse_args, CliInvocation, Command, FileConfig, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use coder_core::bench::{run_benchmark, BenchConfig, ProblemCase, ProviderFactory};
use coder_core::llm::{CompletionRequest, ModelProvider, ModelTurn, ProviderError, Recorder, TokenUsage, ToolCall};
use coder_core::session::{run_session, SessionConfig, SessionStatus};

const CODER: &str = env!("CARGO_BIN_EXE_coder");

struct Scripted(Mutex<Vec<ModelTurn>>);

impl Scripted {
    fn new(mut turns: Vec<ModelTurn>) -> Self {
        turns.reverse();
        Self(Mutex::new(turns))
    }
}

impl ModelProvider for Scripted {
    fn complete(&self, _: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        self.0.lock().unwrap().pop().ok_or(ProviderError::Decode("script exhausted".into()))
    }
}

fn write_turn(path: &str, content: &str) -> ModelTurn {
    ModelTurn {
        text: String::new(),
        tool_calls: vec![ToolCall {
            id: "w1".into(),
            name: "write_file".into(),
            arguments: json!({"file_path": path, "content": content}).to_string(),
        }],
        usage: TokenUsage { input_tokens: 700, output_tokens: 40 },
        finish_reason: Some("tool_calls".into()),
    }
}

fn final_turn(text: &str) -> ModelTurn {
    ModelTurn {
        text: text.into(),
        usage: TokenUsage { input_tokens: 800, output_tokens: 10 },
        finish_reason: Some("stop".into()),
        ..ModelTurn::default()
    }
}

/// Runs the binary in `cwd` with a clean provider environment.
fn coder(cwd: &Path, args: &[&str]) -> Output {
    Process::new(CODER)
        .args(args)
        .current_dir(cwd)
        .env_remove("OPENROUTER_API_KEY")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn code(out: &Output) -> u8 {
    out.status.code().expect("exited normally") as u8
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn project_package_and_task_example() {
    let inv = parse_args(["run", "--project", "cpmpy.md", "--with", "cpmpy", "solve the puzzle"]).unwrap();
    let Command::Run(run) = &inv.command else { panic!("expected run") };
    assert_eq!(run.agent.project.as_deref(), Some(Path::new("cpmpy.md")));
    assert_eq!(run.agent.packages, ["cpmpy"]);
    assert_eq!(run.task.as_deref(), Some("solve the puzzle"));
    assert_eq!(run.workdir, None);
}

#[test]
fn bare_run_falls_back_to_the_task_file() {
    let inv = parse_args(["run"]).unwrap();
    let Command::Run(run) = &inv.command else { panic!("expected run") };
    assert_eq!(run.task, None);

    let dir = tempfile::tempdir().unwrap();
    let out = coder(dir.path(), &["run"]);
    assert_eq!(code(&out), EXIT_USAGE, "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("task"), "{}", text(&out.stderr));

    // With task.md present the task is found; the missing key is next.
    fs::write(dir.path().join("task.md"), "say hello").unwrap();
    let out = coder(dir.path(), &["run"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(text(&out.stderr).contains("OPENROUTER_API_KEY"), "{}", text(&out.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let err = parse_args(["run", "--bogus"]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_USAGE as i32);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&coder(dir.path(), &["run", "--bogus"])), EXIT_USAGE);
    assert_eq!(code(&coder(dir.path(), &[])), EXIT_USAGE);
}

#[test]
fn conflicting_and_invalid_values_are_rejected() {
    assert!(parse_args(["run", "--replay", "a", "--record", "b", "t"]).is_err());
    assert!(parse_args(["run", "--max-iterations", "0", "t"]).is_err());
    assert!(parse_args(["bench"]).is_err());
    assert!(parse_args(["bench", "--parallel", "0", "p"]).is_err());
    let inv = parse_args(["-vv", "bench", "--with", "a", "--with", "b", "--parallel", "3", "problems"]).unwrap();
    assert_eq!(inv.verbose, 2);
    let Command::Bench(b) = &inv.command else { panic!("expected bench") };
    assert_eq!(b.agent.packages, ["a", "b"]);
    assert_eq!(b.parallel, Some(3));
}

#[test]
fn missing_workdir_and_bad_config_exit_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = coder(dir.path(), &["run", "--workdir", "does/not/exist", "t"]);
    assert_eq!(code(&out), EXIT_USAGE);

    fs::write(dir.path().join("coder.toml"), "no_such_key = 1\n").unwrap();
    let out = coder(dir.path(), &["run", "t"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(text(&out.stderr).contains("no_such_key"), "{}", text(&out.stderr));
}

#[test]
fn config_file_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(
        &path,
        r#"
model = "openai/gpt-4o"
base_url = "http://localhost:9999/v1"
max_iterations = 7
use_uv = false
kernel_command = ["python3", "-m", "ipykernel_launcher", "-f", "{connection_file}"]
execute_timeout_secs = 12.5
checker_interpreter = ["python3", "-I"]
"#,
    )
    .unwrap();
    let cfg = FileConfig::load(Some(&path)).unwrap();
    assert_eq!(cfg.model.as_deref(), Some("openai/gpt-4o"));
    assert_eq!(cfg.max_iterations, Some(7));
    assert_eq!(cfg.live().base_url, "http://localhost:9999/v1");
    let launch = cfg.launch();
    assert!(launch.env_wrapper.is_none());
    assert_eq!(launch.kernel_command[0], "python3");
    assert_eq!(launch.execute_timeout.as_secs_f64(), 12.5);
    assert!(FileConfig::load(Some(&dir.path().join("absent.toml"))).is_err());
}

#[test]
fn replayed_run_through_the_binary() {
    let root = tempfile::tempdir().unwrap();
    let task = "Write greeting.txt containing hello.";
    let recording = root.path().join("greet.jsonl");

    let rec_dir = root.path().join("rec");
    fs::create_dir_all(&rec_dir).unwrap();
    let mut cfg = SessionConfig::new(&rec_dir);
    cfg.task = Some(task.into());
    cfg.transcript_path = Some(root.path().join("rec.transcript.jsonl"));
    let recorder = Recorder::create(
        Scripted::new(vec![write_turn("greeting.txt", "hello\n"), final_turn("Wrote greeting.txt.")]),
        &recording,
    )
    .unwrap();
    let recorded = run_session(&cfg, &recorder, None).unwrap();
    assert_eq!(recorded.status, SessionStatus::Completed);

    let work = root.path().join("work");
    fs::create_dir_all(&work).unwrap();
    let transcript = root.path().join("t.jsonl");
    let out = coder(
        root.path(),
        &[
            "run",
            "--workdir",
            work.to_str().unwrap(),
            "--replay",
            recording.to_str().unwrap(),
            "--transcript",
            transcript.to_str().unwrap(),
            task,
        ],
    );
    assert_eq!(code(&out), EXIT_OK, "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), "Wrote greeting.txt.");
    assert_eq!(fs::read_to_string(work.join("greeting.txt")).unwrap(), "hello\n");
    assert!(transcript.is_file());

    // A different task no longer matches the recording.
    let out = coder(root.path(), &["run", "--workdir", work.to_str().unwrap(), "--replay", recording.to_str().unwrap(), "another task"]);
    assert_eq!(code(&out), EXIT_FAILURE);
    assert!(text(&out.stderr).contains("diverged"), "{}", text(&out.stderr));
    // The default transcript lands in the workdir's log directory.
    assert!(fs::read_dir(work.join(".coder")).unwrap().count() >= 1);
}

fn problem(root: &Path, id: &str, task: &str, check: &str) {
    let dir = root.join(id);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("task.md"), task).unwrap();
    fs::write(dir.join("meta.json"), r#"{"kind": "satisfaction"}"#).unwrap();
    fs::write(dir.join("check.py"), check).unwrap();
}

#[test]
fn replayed_bench_through_the_binary() {
    let root = tempfile::tempdir().unwrap();
    let problems = root.path().join("problems");
    problem(
        &problems,
        "square",
        "Find x > 0 with x * x == 49. Write solution.json as {\"x\": x}.",
        "import json, sys\nx = json.load(open(sys.argv[1]))['x']\nsys.exit(0 if x * x == 49 and x > 0 else 1)\n",
    );
    problem(
        &problems,
        "parity",
        "Give an even number n. Write solution.json as {\"n\": n}.",
        "import json, sys\nn = json.load(open(sys.argv[1]))['n']\nsys.exit(0 if n % 2 == 0 else 1)\n",
    );
    let answers = [("square", r#"{"x": 7}"#), ("parity", r#"{"n": 4}"#)];

    // Sessions write solution.json directly, so no kernel is needed.
    let recordings = root.path().join("recordings");
    let dir = recordings.clone();
    let factory: ProviderFactory = Arc::new(move |case: &ProblemCase| {
        let answer = answers.iter().find(|(id, _)| *id == case.id).unwrap().1;
        let turns = vec![write_turn("solution.json", answer), final_turn("done")];
        Ok(Box::new(Recorder::create(Scripted::new(turns), &dir.join(format!("{}.jsonl", case.id)))?) as Box<dyn ModelProvider>)
    });
    let recorded = run_benchmark(&problems, &BenchConfig::new(root.path().join("rec-out"), factory)).unwrap();
    assert_eq!(recorded.passed(), 2, "{:?}", recorded.verdicts);

    let out_dir = root.path().join("out");
    let args = ["bench", "--replay-dir", recordings.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), problems.to_str().unwrap()];
    let out = coder(root.path(), &args);
    assert_eq!(code(&out), EXIT_OK, "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout), "problem r w ex td in/out\nparity  0 1 0 0 2/0\nsquare  0 1 0 0 2/0\n");
    assert!(out_dir.join("verdicts.json").is_file());
    assert!(out_dir.join("stats.txt").is_file());

    let path = recordings.join("square.jsonl");
    let mut lines: Vec<serde_json::Value> = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let recorded_args = &mut lines[0]["turn"]["tool_calls"][0]["arguments"];
    *recorded_args = json!(recorded_args.as_str().unwrap().replace(r#"\"x\": 7"#, r#"\"x\": 8"#));
    assert!(recorded_args.as_str().unwrap().contains("8"));
    let tampered: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&path, tampered.join("\n") + "\n").unwrap();
    let out = coder(root.path(), &args);
    assert_eq!(code(&out), EXIT_FAILURE);
    let stderr = text(&out.stderr);
    assert!(stderr.contains("square failed") && !stderr.contains("parity failed"), "{stderr}");
}

fn invocation() -> impl Strategy<Value = CliInvocation> {
    let path = "[a-z][a-z0-9_./-]{0,12}".prop_map(PathBuf::from);
    let agent = (
        prop::option::of(path.clone()),
        prop::collection::vec("[a-z][a-z0-9_-]{0,8}", 0..3),
        prop::option::of("[a-z]{1,6}/[a-z0-9.-]{1,10}"),
        prop::option::of(1u32..500),
    )
        .prop_map(|(project, packages, model, max_iterations)| coder_cli::AgentFlags {
            project,
            packages,
            model,
            max_iterations,
        });
    let run = (
        agent.clone(),
        prop::option::of(path.clone()),
        prop::option::of(path.clone()),
        prop::option::of(path.clone()),
        prop::option::of(".{1,30}"),
        any::<bool>(),
    )
        .prop_map(|(agent, workdir, replay, transcript, task, record_instead)| {
            let (replay, record) = if record_instead { (None, replay) } else { (replay, None) };
            Command::Run(coder_cli::RunArgs { agent, workdir, replay, record, transcript, task })
        });
    let bench = (agent, path.clone(), prop::option::of(path.clone()), prop::option::of(path.clone()), prop::option::of(1u32..64))
        .prop_map(|(agent, problems, out, replay_dir, parallel)| {
            Command::Bench(coder_cli::BenchArgs { agent, problems, out, replay_dir, record_dir: None, parallel })
        });
    (prop::option::of(path), 0u8..3, prop_oneof![run, bench])
        .prop_map(|(config, verbose, command)| CliInvocation { config, verbose, command })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn argv_round_trip(inv in invocation()) {
        let argv = inv.to_argv();
        let parsed = parse_args(&argv).map_err(|e| TestCaseError::fail(format!("{argv:?}: {e}")))?;
        prop_assert_eq!(parsed, inv);
    }
}
