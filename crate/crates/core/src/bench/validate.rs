use std::fs;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde_json::{Number, Value};

use super::{FailureKind, ProblemCase, ProblemKind, ValidationSpec, Verdict, SOLUTION_FILE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidatorConfig {
    /// Command that runs a checker: `interpreter... check solution.json`.
    pub interpreter: Vec<String>,
    pub checker_timeout: Duration,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into()],
            checker_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveMatch {
    Equal,
    Differs,
}

/// Exact for two integers, relative tolerance 1e-6 otherwise.
pub fn compare_objective(reported: &Number, reference: &Number) -> ObjectiveMatch {
    let as_int = |n: &Number| n.as_i64().map(i128::from).or_else(|| n.as_u64().map(i128::from));
    let equal = match (as_int(reported), as_int(reference)) {
        (Some(a), Some(b)) => a == b,
        _ => match (reported.as_f64(), reference.as_f64()) {
            (Some(a), Some(b)) => a == b || (a - b).abs() <= 1e-6 * a.abs().max(b.abs()),
            _ => false,
        },
    };
    if equal {
        ObjectiveMatch::Equal
    } else {
        ObjectiveMatch::Differs
    }
}

/// Judges one solution. Satisfaction problems pass iff the checker accepts
/// (or the output equals the expected file); optimization problems must in
/// addition report the reference objective.
///
/// A checker may print a JSON object on its last stdout line with
/// `objective` (the value it recomputed from the solution) and/or
/// `reference_objective`.
pub fn validate_solution(case: &ProblemCase, output: &str, config: &ValidatorConfig) -> Verdict {
    let id = case.id.as_str();
    let fail = |kind, details: String| Verdict::fail(id, kind, details);

    let value: Value = match serde_json::from_str(output) {
        Ok(v) => v,
        Err(e) => return fail(FailureKind::MalformedOutput, format!("solution is not valid JSON: {e}")),
    };
    let missing: Vec<&str> = case
        .required_keys
        .iter()
        .filter(|k| value.get(k.as_str()).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return fail(
            FailureKind::MalformedOutput,
            format!("solution lacks required keys: {}", missing.join(", ")),
        );
    }
    let claimed = match case.kind {
        ProblemKind::Optimization => match value.get(&case.objective_key) {
            None => None,
            Some(Value::Number(n)) => Some(n.clone()),
            Some(other) => {
                return fail(
                    FailureKind::MalformedOutput,
                    format!("objective `{}` is not a number: {other}", case.objective_key),
                )
            }
        },
        ProblemKind::Satisfaction => None,
    };

    let mut report = CheckerReport::default();
    match &case.validation {
        ValidationSpec::Checker(checker) => match run_checker(checker, &case.dir, output, config) {
            Ok(r) if r.accepted => report = r,
            Ok(r) if r.malformed => {
                return fail(FailureKind::MalformedOutput, format!("checker rejected the format: {}", r.message))
            }
            Ok(r) => return fail(FailureKind::ConstraintViolation, r.message),
            Err(v) => return fail(v.0, v.1),
        },
        ValidationSpec::ExpectedOutput(path) => {
            let expected: Value = match fs::read_to_string(path).map(|t| serde_json::from_str(&t)) {
                Ok(Ok(v)) => v,
                _ => return fail(FailureKind::RuntimeError, format!("unreadable expected output {}", path.display())),
            };
            let strip = |v: &Value| {
                let mut v = v.clone();
                if case.kind == ProblemKind::Optimization {
                    if let Some(obj) = v.as_object_mut() {
                        obj.remove(&case.objective_key);
                    }
                }
                v
            };
            if strip(&value) != strip(&expected) {
                return fail(FailureKind::ConstraintViolation, "output differs from the expected output".into());
            }
        }
    }

    if case.kind == ProblemKind::Satisfaction {
        return Verdict::pass(id, "checker accepted the solution");
    }

    let Some(reported) = claimed.clone().or_else(|| report.objective.clone()) else {
        return fail(
            FailureKind::MalformedOutput,
            format!("optimization solution lacks `{}`", case.objective_key),
        );
    };
    if let (Some(claimed), Some(actual)) = (&claimed, &report.objective) {
        if compare_objective(claimed, actual) == ObjectiveMatch::Differs {
            return fail(
                FailureKind::ConstraintViolation,
                format!("solution claims objective {claimed} but achieves {actual}"),
            );
        }
    }
    let Some(reference) = case.reference_objective.clone().or(report.reference) else {
        return fail(FailureKind::RuntimeError, "no reference objective available".into());
    };
    match compare_objective(&reported, &reference) {
        ObjectiveMatch::Equal => Verdict::pass(id, format!("objective {reported} matches the reference")),
        ObjectiveMatch::Differs => fail(
            FailureKind::Suboptimal,
            format!("objective {reported} differs from the reference {reference}"),
        ),
    }
}

#[derive(Debug, Default)]
struct CheckerReport {
    accepted: bool,
    malformed: bool,
    message: String,
    objective: Option<Number>,
    reference: Option<Number>,
}

fn run_checker(
    checker: &Path,
    cwd: &Path,
    output: &str,
    config: &ValidatorConfig,
) -> Result<CheckerReport, (FailureKind, String)> {
    let scratch = std::env::temp_dir().join(format!("coder-check-{}", uuid::Uuid::new_v4()));
    let io_err = |e: std::io::Error| (FailureKind::RuntimeError, format!("checker setup: {e}"));
    fs::create_dir_all(&scratch).map_err(io_err)?;
    let solution = scratch.join(SOLUTION_FILE);
    let result = fs::write(&solution, output)
        .map_err(io_err)
        .and_then(|()| spawn_checker(checker, cwd, &solution, config));
    let _ = fs::remove_dir_all(&scratch);
    let out = result?;

    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let mut report = CheckerReport {
        message: format!("{}{}", stdout.trim(), if stderr.trim().is_empty() { String::new() } else { format!("\n{}", stderr.trim()) })
            .trim()
            .to_string(),
        ..CheckerReport::default()
    };
    if let Some(obj) = stdout
        .lines()
        .rev()
        .find_map(|l| serde_json::from_str::<Value>(l.trim()).ok().filter(Value::is_object))
    {
        report.objective = obj.get("objective").and_then(|v| v.as_number().cloned());
        report.reference = obj.get("reference_objective").and_then(|v| v.as_number().cloned());
    }
    match out.status.code() {
        Some(0) => report.accepted = true,
        Some(1) => {
            if report.message.is_empty() {
                report.message = "checker rejected the solution".into();
            }
        }
        Some(2) => report.malformed = true,
        code => {
            return Err((
                FailureKind::RuntimeError,
                format!("checker failed ({code:?}): {}", report.message),
            ))
        }
    }
    Ok(report)
}

fn spawn_checker(
    checker: &Path,
    cwd: &Path,
    solution: &Path,
    config: &ValidatorConfig,
) -> Result<Output, (FailureKind, String)> {
    let (program, args) = config
        .interpreter
        .split_first()
        .ok_or((FailureKind::RuntimeError, "empty checker interpreter".to_string()))?;
    let child = Command::new(program)
        .args(args)
        .arg(checker)
        .arg(solution)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| (FailureKind::RuntimeError, format!("cannot run checker {}: {e}", checker.display())))?;
    let pid = child.id() as libc::pid_t;
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(child.wait_with_output());
    });
    let waited = match rx.recv_timeout(config.checker_timeout) {
        Ok(r) => r,
        Err(_) => {
            // The checker leads its own group, so this also reaches anything
            // it spawned that still holds the output pipes.
            // SAFETY: plain syscall; the group leader is unreaped while the
            // waiter thread is blocked on it.
            unsafe { libc::killpg(pid, libc::SIGKILL) };
            let _ = rx.recv();
            return Err((
                FailureKind::Timeout,
                format!("checker exceeded {}s", config.checker_timeout.as_secs()),
            ));
        }
    };
    waited.map_err(|e| (FailureKind::RuntimeError, format!("checker: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(dir: &Path, kind: ProblemKind, reference: Option<Number>) -> ProblemCase {
        ProblemCase {
            id: "p".into(),
            dir: dir.to_path_buf(),
            kind,
            task_file: dir.join("task.md"),
            validation: ValidationSpec::Checker(dir.join("check.sh")),
            reference_objective: reference,
            solution_script: "solution.py".into(),
            objective_key: "objective".into(),
            required_keys: vec![],
        }
    }

    /// Shell checker: accepts iff the solution file contains `ok`.
    fn sh_checker(dir: &Path, body: &str) -> ValidatorConfig {
        fs::write(dir.join("check.sh"), body).unwrap();
        ValidatorConfig {
            interpreter: vec!["sh".into()],
            checker_timeout: Duration::from_secs(5),
        }
    }

    const GREP_OK: &str = "grep -q ok \"$1\" || { echo 'row 2 sums to 7'; exit 1; }\n";

    #[test]
    fn objective_comparison() {
        let n = |v: Value| v.as_number().unwrap().clone();
        assert_eq!(compare_objective(&n(42.into()), &n(42.into())), ObjectiveMatch::Equal);
        assert_eq!(compare_objective(&n(42.into()), &n(41.into())), ObjectiveMatch::Differs);
        assert_eq!(compare_objective(&n(i64::MIN.into()), &n(u64::MAX.into())), ObjectiveMatch::Differs);
        assert_eq!(
            compare_objective(&n(serde_json::json!(1000000.0)), &n(serde_json::json!(1000000.9))),
            ObjectiveMatch::Equal
        );
        assert_eq!(
            compare_objective(&n(serde_json::json!(1.0)), &n(serde_json::json!(1.00001))),
            ObjectiveMatch::Differs
        );
        assert_eq!(compare_objective(&n(serde_json::json!(41.0)), &n(41.into())), ObjectiveMatch::Equal);
    }

    #[test]
    fn satisfaction_accept_and_reject() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), GREP_OK);
        let c = case(dir.path(), ProblemKind::Satisfaction, None);
        assert!(validate_solution(&c, r#"{"x": "ok"}"#, &cfg).passed());
        let v = validate_solution(&c, r#"{"x": "no"}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::ConstraintViolation));
        assert!(v.details.contains("row 2 sums to 7"));
    }

    #[test]
    fn not_json_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), "exit 0\n");
        let v = validate_solution(&case(dir.path(), ProblemKind::Satisfaction, None), "not json", &cfg);
        assert_eq!(v.failure, Some(FailureKind::MalformedOutput));
    }

    #[test]
    fn missing_required_key_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), "exit 0\n");
        let mut c = case(dir.path(), ProblemKind::Satisfaction, None);
        c.required_keys = vec!["queens".into()];
        let v = validate_solution(&c, r#"{"other": 1}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::MalformedOutput));
        assert!(validate_solution(&c, r#"{"queens": [1]}"#, &cfg).passed());
    }

    #[test]
    fn checker_exit_two_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), "echo 'missing key'; exit 2\n");
        let v = validate_solution(&case(dir.path(), ProblemKind::Satisfaction, None), "{}", &cfg);
        assert_eq!(v.failure, Some(FailureKind::MalformedOutput));
    }

    #[test]
    fn suboptimal_objective() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), "exit 0\n");
        let c = case(dir.path(), ProblemKind::Optimization, Some(41.into()));
        let v = validate_solution(&c, r#"{"objective": 42}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::Suboptimal));
        assert!(validate_solution(&c, r#"{"objective": 41}"#, &cfg).passed());
        let v = validate_solution(&c, r#"{"value": 41}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::MalformedOutput));
        let v = validate_solution(&c, r#"{"objective": "41"}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::MalformedOutput));
    }

    #[test]
    fn checker_reported_objectives() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sh_checker(dir.path(), "echo '{\"objective\": 40, \"reference_objective\": 40}'\n");
        let c = case(dir.path(), ProblemKind::Optimization, None);
        assert!(validate_solution(&c, r#"{"objective": 40}"#, &cfg).passed());
        assert!(validate_solution(&c, r#"{}"#, &cfg).passed());
        let v = validate_solution(&c, r#"{"objective": 45}"#, &cfg);
        assert_eq!(v.failure, Some(FailureKind::ConstraintViolation));
    }

    #[test]
    fn expected_output_mode() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("expected.json"), r#"{"a": [1, 2], "objective": 3}"#).unwrap();
        let mut c = case(dir.path(), ProblemKind::Satisfaction, None);
        c.validation = ValidationSpec::ExpectedOutput(dir.path().join("expected.json"));
        let cfg = ValidatorConfig::default();
        assert!(validate_solution(&c, r#"{"objective": 3, "a": [1, 2]}"#, &cfg).passed());
        assert!(!validate_solution(&c, r#"{"objective": 3, "a": [2, 1]}"#, &cfg).passed());
    }

    #[test]
    fn checker_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sh_checker(dir.path(), "sleep 30\n");
        cfg.checker_timeout = Duration::from_millis(200);
        let v = validate_solution(&case(dir.path(), ProblemKind::Satisfaction, None), "{}", &cfg);
        assert_eq!(v.failure, Some(FailureKind::Timeout));
    }
}
