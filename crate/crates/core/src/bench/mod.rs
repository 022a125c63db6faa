//! Batch runs over a directory of problems.
//!
//! Layout of one problem:
//!
//! ```text
//! problems/<id>/task.md
//! problems/<id>/meta.json     {"kind": "satisfaction" | "optimization", ...}
//! problems/<id>/check[.py]    optional checker, run as `interpreter check solution.json`
//! ```
//!
//! Each problem gets a fresh working directory and its own session. After the
//! session the agent's solution script is run once more in a fresh kernel,
//! and its JSON output is judged by the checker and, for optimization
//! problems, by comparing the objective with the reference value.

mod stats;
mod validate;

use std::fs;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;
use tracing::{info, warn};

use crate::kernel::{ExecStatus, ExecutionContext, KernelError, KernelExecutor, KernelManager, LaunchSpec};
use crate::llm::{ModelProvider, ProviderError, ReplayProvider};
use crate::session::{run_session, SessionConfig, SessionOutcome, SessionStatus};

pub use stats::{emit_stats_table, format_stats_row, thousands, RunStats};
pub use validate::{compare_objective, validate_solution, ObjectiveMatch, ValidatorConfig};

pub const META_FILE: &str = "meta.json";
pub const TASK_FILE: &str = "task.md";
pub const SOLUTION_FILE: &str = "solution.json";
pub const DEFAULT_SOLUTION_SCRIPT: &str = "solution.py";
pub const DEFAULT_OBJECTIVE_KEY: &str = "objective";
pub const DEFAULT_SOLUTION_TIMEOUT: Duration = Duration::from_secs(300);
/// IPython runs a script file as `__main__` with `%run`.
pub const DEFAULT_RUNNER: &str = "%run {script}";
pub const SCRIPT_PLACEHOLDER: &str = "{script}";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Satisfaction,
    Optimization,
}

/// Contents of `meta.json`. Unknown keys are rejected so that typos do not
/// silently disable validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemMeta {
    pub kind: ProblemKind,
    #[serde(default)]
    pub reference_objective: Option<Number>,
    /// Checker path relative to the problem directory.
    #[serde(default)]
    pub checker: Option<String>,
    /// JSON file the output must equal, when there is no checker.
    #[serde(default)]
    pub expected_output: Option<String>,
    /// Script the agent is asked to produce; defaults to `solution.py`.
    #[serde(default)]
    pub solution_script: Option<String>,
    #[serde(default)]
    pub objective_key: Option<String>,
    /// Keys the solution object must contain.
    #[serde(default)]
    pub required_keys: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValidationSpec {
    Checker(PathBuf),
    ExpectedOutput(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemCase {
    pub id: String,
    pub dir: PathBuf,
    pub kind: ProblemKind,
    pub task_file: PathBuf,
    pub validation: ValidationSpec,
    pub reference_objective: Option<Number>,
    pub solution_script: String,
    pub objective_key: String,
    pub required_keys: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid meta.json: {message}")]
    Meta { path: PathBuf, message: String },
}

impl ProblemCase {
    pub fn load(dir: &Path) -> Result<Self, ProblemError> {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|source| ProblemError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: ProblemMeta = serde_json::from_str(&text).map_err(|e| ProblemError::Meta {
            path: meta_path.clone(),
            message: e.to_string(),
        })?;
        let bad = |message: String| ProblemError::Meta {
            path: meta_path.clone(),
            message,
        };

        let task_file = dir.join(TASK_FILE);
        if !task_file.is_file() {
            return Err(ProblemError::Io {
                path: task_file,
                source: io::Error::new(io::ErrorKind::NotFound, "task file missing"),
            });
        }

        let checker = match &meta.checker {
            Some(name) => Some(dir.join(name)),
            None => ["check", "check.py"].iter().map(|n| dir.join(n)).find(|p| p.is_file()),
        };
        let validation = match (checker, &meta.expected_output) {
            (Some(path), _) => {
                if !path.is_file() {
                    return Err(bad(format!("checker {} not found", path.display())));
                }
                ValidationSpec::Checker(path)
            }
            (None, Some(name)) => {
                let path = dir.join(name);
                if !path.is_file() {
                    return Err(bad(format!("expected output {} not found", path.display())));
                }
                ValidationSpec::ExpectedOutput(path)
            }
            (None, None) => return Err(bad("no checker and no expected output".into())),
        };
        if meta.kind == ProblemKind::Optimization
            && meta.reference_objective.is_none()
            && !matches!(validation, ValidationSpec::Checker(_))
        {
            return Err(bad("optimization problem without reference objective or checker".into()));
        }

        Ok(Self {
            id,
            dir: dir.to_path_buf(),
            kind: meta.kind,
            task_file,
            validation,
            reference_objective: meta.reference_objective,
            solution_script: meta
                .solution_script
                .unwrap_or_else(|| DEFAULT_SOLUTION_SCRIPT.to_string()),
            objective_key: meta
                .objective_key
                .unwrap_or_else(|| DEFAULT_OBJECTIVE_KEY.to_string()),
            required_keys: meta.required_keys,
        })
    }

    /// Files that must not be copied into the agent's working directory.
    fn is_private(&self, path: &Path) -> bool {
        let meta = self.dir.join(META_FILE);
        let validation = match &self.validation {
            ValidationSpec::Checker(p) | ValidationSpec::ExpectedOutput(p) => p,
        };
        path == meta || path == validation.as_path()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    MalformedOutput,
    ConstraintViolation,
    Suboptimal,
    RuntimeError,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub problem_id: String,
    pub status: VerdictStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    pub details: String,
}

impl Verdict {
    pub fn pass(id: &str, details: impl Into<String>) -> Self {
        Self {
            problem_id: id.to_string(),
            status: VerdictStatus::Pass,
            failure: None,
            details: details.into(),
        }
    }

    pub fn fail(id: &str, kind: FailureKind, details: impl Into<String>) -> Self {
        Self {
            problem_id: id.to_string(),
            status: VerdictStatus::Fail,
            failure: Some(kind),
            details: details.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

/// Problem directories under `root` that contain a `meta.json`, sorted by
/// id. Directories that fail to load are returned as errors alongside.
pub fn discover_problems(root: &Path) -> io::Result<Vec<Result<ProblemCase, (String, ProblemError)>>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs
        .into_iter()
        .map(|dir| {
            ProblemCase::load(&dir).map_err(|e| {
                let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
                (id, e)
            })
        })
        .collect())
}

/// Builds the model provider for one problem.
pub type ProviderFactory =
    Arc<dyn Fn(&ProblemCase) -> Result<Box<dyn ModelProvider>, ProviderError> + Send + Sync>;

/// Replays `<dir>/<problem id>.jsonl` for each problem.
pub fn replay_from_dir(dir: impl Into<PathBuf>) -> ProviderFactory {
    let dir = dir.into();
    Arc::new(move |case: &ProblemCase| {
        let provider = ReplayProvider::open(&dir.join(format!("{}.jsonl", case.id)))?;
        Ok(Box::new(provider) as Box<dyn ModelProvider>)
    })
}

#[derive(Clone)]
pub struct BenchConfig {
    /// Parent of the per-problem working directories and transcripts.
    pub output_dir: PathBuf,
    /// Template for each problem's session; workdir, task and transcript
    /// are filled in per problem.
    pub session: SessionConfig,
    pub provider: ProviderFactory,
    pub launch: LaunchSpec,
    pub solution_timeout: Duration,
    /// Code that runs a script in the kernel; `{script}` is substituted.
    pub runner: String,
    pub validator: ValidatorConfig,
    pub parallelism: usize,
}

impl BenchConfig {
    pub fn new(output_dir: impl Into<PathBuf>, provider: ProviderFactory) -> Self {
        let output_dir = output_dir.into();
        Self {
            session: SessionConfig::new(&output_dir),
            output_dir,
            provider,
            launch: LaunchSpec::default(),
            solution_timeout: DEFAULT_SOLUTION_TIMEOUT,
            runner: DEFAULT_RUNNER.to_string(),
            validator: ValidatorConfig::default(),
            parallelism: 1,
        }
    }

    pub fn workdir(&self, id: &str) -> PathBuf {
        self.output_dir.join("work").join(id)
    }

    pub fn transcript(&self, id: &str) -> PathBuf {
        self.output_dir.join("transcripts").join(format!("{id}.jsonl"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchReport {
    pub verdicts: Vec<Verdict>,
    pub stats: Vec<RunStats>,
}

impl BenchReport {
    pub fn passed(&self) -> usize {
        self.verdicts.iter().filter(|v| v.passed()).count()
    }

    /// Writes `verdicts.json` and `stats.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let verdicts = serde_json::to_string_pretty(&self.verdicts)?;
        fs::write(dir.join("verdicts.json"), verdicts + "\n")?;
        fs::write(dir.join("stats.txt"), emit_stats_table(&self.stats))
    }
}

/// Runs every problem under `problems_dir`. Per-problem failures become
/// failing verdicts; only an unreadable problems directory is an error.
pub fn run_benchmark(problems_dir: &Path, config: &BenchConfig) -> io::Result<BenchReport> {
    let discovered = discover_problems(problems_dir)?;
    let slots: Vec<Mutex<Option<(Verdict, RunStats)>>> =
        discovered.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.clamp(1, discovered.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                // One single-slot manager per worker keeps kernels of
                // concurrent problems apart.
                let manager = KernelManager::new(config.launch.clone());
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(entry) = discovered.get(i) else { break };
                    let result = match entry {
                        Ok(case) => catch_unwind(AssertUnwindSafe(|| run_problem(case, config, &manager)))
                            .unwrap_or_else(|panic| {
                                let msg = panic
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_default();
                                (
                                    Verdict::fail(&case.id, FailureKind::RuntimeError, format!("harness panic: {msg}")),
                                    RunStats::empty(&case.id),
                                )
                            }),
                        Err((id, e)) => (
                            Verdict::fail(id, FailureKind::RuntimeError, format!("invalid problem: {e}")),
                            RunStats::empty(id),
                        ),
                    };
                    *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
                }
                manager.shutdown_all();
            });
        }
    });

    let mut report = BenchReport::default();
    for slot in slots {
        if let Some((verdict, stats)) = slot.into_inner().unwrap_or_else(|p| p.into_inner()) {
            report.verdicts.push(verdict);
            report.stats.push(stats);
        }
    }
    Ok(report)
}

fn run_problem(case: &ProblemCase, config: &BenchConfig, manager: &Arc<KernelManager>) -> (Verdict, RunStats) {
    info!(problem = %case.id, "running problem");
    let workdir = config.workdir(&case.id);
    if let Err(e) = prepare_workdir(case, &workdir) {
        return (
            Verdict::fail(&case.id, FailureKind::RuntimeError, format!("cannot prepare working directory: {e}")),
            RunStats::empty(&case.id),
        );
    }

    let mut session = config.session.clone();
    session.workdir = workdir.clone();
    session.task = None;
    session.task_file = TASK_FILE.to_string();
    session.transcript_path = Some(config.transcript(&case.id));

    let provider = match (config.provider)(case) {
        Ok(p) => p,
        Err(e) => {
            return (
                Verdict::fail(&case.id, FailureKind::RuntimeError, format!("model provider: {e}")),
                RunStats::empty(&case.id),
            )
        }
    };
    let ctx = ExecutionContext::new(&workdir, session.packages.clone());
    let executor = KernelExecutor::new(manager.clone(), ctx.clone());
    let outcome = match run_session(&session, provider.as_ref(), Some(Box::new(executor))) {
        Ok(o) => o,
        Err(e) => {
            return (
                Verdict::fail(&case.id, FailureKind::RuntimeError, format!("session: {e}")),
                RunStats::empty(&case.id),
            )
        }
    };
    let stats = RunStats::from_usage(&case.id, &outcome.usage);

    let verdict = match solution_output(case, config, manager, &ctx, &outcome) {
        Ok(output) => validate_solution(case, &output, &config.validator),
        Err(verdict) => verdict,
    };
    info!(problem = %case.id, status = ?verdict.status, "problem finished");
    (verdict, stats)
}

fn prepare_workdir(case: &ProblemCase, workdir: &Path) -> io::Result<()> {
    if workdir.exists() {
        fs::remove_dir_all(workdir)?;
    }
    fs::create_dir_all(workdir)?;
    copy_public(case, &case.dir, workdir)
}

fn copy_public(case: &ProblemCase, from: &Path, to: &Path) -> io::Result<()> {
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let path = entry.path();
        let kind = entry.file_type()?;
        if case.is_private(&path) {
            continue;
        }
        let target = to.join(entry.file_name());
        if kind.is_dir() {
            fs::create_dir_all(&target)?;
            copy_public(case, &path, &target)?;
        } else if kind.is_file() {
            fs::copy(&path, &target)?;
        }
    }
    Ok(())
}

/// Re-runs the solution script in a fresh kernel and returns its JSON text.
fn solution_output(
    case: &ProblemCase,
    config: &BenchConfig,
    manager: &Arc<KernelManager>,
    ctx: &ExecutionContext,
    outcome: &SessionOutcome,
) -> Result<String, Verdict> {
    let fail = |kind, details: String| Verdict::fail(&case.id, kind, details);
    let workdir = &ctx.workdir;
    let script = workdir.join(&case.solution_script);
    let solution = workdir.join(SOLUTION_FILE);

    if !script.is_file() {
        if solution.is_file() {
            warn!(problem = %case.id, "no solution script; judging the existing {SOLUTION_FILE}");
            return fs::read_to_string(&solution)
                .map_err(|e| fail(FailureKind::RuntimeError, format!("cannot read {SOLUTION_FILE}: {e}")));
        }
        return Err(fail(
            FailureKind::RuntimeError,
            format!(
                "session ended with status {} and produced neither {} nor {SOLUTION_FILE}",
                outcome.status, case.solution_script
            ),
        ));
    }
    if outcome.status != SessionStatus::Completed {
        warn!(problem = %case.id, status = %outcome.status, "session did not complete; running its script anyway");
    }

    if solution.exists() {
        let _ = fs::remove_file(&solution);
    }
    if let Some(handle) = manager.current() {
        manager.shutdown(&handle);
    }
    let code = config.runner.replace(SCRIPT_PLACEHOLDER, &case.solution_script);
    let result = manager
        .ensure_kernel(ctx)
        .and_then(|kernel| kernel.execute(&code, config.solution_timeout));
    let result = match result {
        Ok(r) => r,
        Err(KernelError::Timeout(secs)) => {
            return Err(fail(FailureKind::Timeout, format!("solution script exceeded {secs:.0}s")))
        }
        Err(e) => return Err(fail(FailureKind::RuntimeError, format!("solution run: {e}"))),
    };
    if let Some(handle) = manager.current() {
        manager.shutdown(&handle);
    }
    if result.status == ExecStatus::Error {
        return Err(fail(FailureKind::RuntimeError, result.render()));
    }

    match fs::read_to_string(&solution) {
        Ok(text) => Ok(text),
        Err(_) => json_from_stdout(&result.stdout).ok_or_else(|| {
            fail(
                FailureKind::MalformedOutput,
                format!("no {SOLUTION_FILE} was written and stdout holds no JSON"),
            )
        }),
    }
}

/// The whole of stdout if it is JSON, else its last line that is.
fn json_from_stdout(stdout: &str) -> Option<String> {
    let trimmed = stdout.trim();
    if serde_json::from_str::<Value>(trimmed).is_ok() {
        return Some(trimmed.to_string());
    }
    stdout
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty() && serde_json::from_str::<Value>(l).is_ok())
        .map(str::to_string)
}
