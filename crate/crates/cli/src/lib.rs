//! Argument parsing, `coder.toml` loading and the `run` / `bench` commands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use coder_core::bench::{self, BenchConfig, ProviderFactory, ValidatorConfig};
use coder_core::kernel::{EnvWrapper, ExecutionContext, KernelExecutor, KernelManager, LaunchSpec};
use coder_core::llm::{
    build_provider, HttpTransport, LiveConfig, ModelProvider, OpenAiCompatible, ProviderError, ProviderMode,
    Recorder, ReqwestTransport,
};
use coder_core::session::{run_session, SessionConfig, SessionError, SessionStatus};

pub const CONFIG_FILE: &str = "coder.toml";

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Clone, Debug, PartialEq, Eq)]
#[command(name = "coder", version, about = "A ReAct coding agent with a persistent Python kernel")]
pub struct CliInvocation {
    /// Configuration file (default: ./coder.toml when present).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output on stderr; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Eq)]
pub enum Command {
    /// Run one session in a working directory.
    Run(RunArgs),
    /// Run every problem in a directory and validate the solutions.
    Bench(BenchArgs),
}

/// Flags shared by `run` and `bench`.
#[derive(Args, Clone, Debug, Default, PartialEq, Eq)]
pub struct AgentFlags {
    /// Project prompt appended to the system prompt.
    #[arg(long, value_name = "FILE")]
    pub project: Option<PathBuf>,

    /// Package to install into the kernel environment; repeatable.
    #[arg(long = "with", value_name = "PACKAGE")]
    pub packages: Vec<String>,

    /// Model identifier, e.g. anthropic/claude-sonnet-4.
    #[arg(long)]
    pub model: Option<String>,

    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub max_iterations: Option<u32>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Eq)]
pub struct RunArgs {
    #[command(flatten)]
    pub agent: AgentFlags,

    /// Working directory (default: the current directory).
    #[arg(long, value_name = "DIR")]
    pub workdir: Option<PathBuf>,

    /// Serve model turns from a recording instead of the network.
    #[arg(long, value_name = "FILE", conflicts_with = "record")]
    pub replay: Option<PathBuf>,

    /// Record every model exchange to a file.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,

    /// Transcript location (default: <workdir>/.coder/transcript-<time>.jsonl).
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,

    /// Task text; when omitted the task is read from task.md in the workdir.
    pub task: Option<String>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Eq)]
pub struct BenchArgs {
    #[command(flatten)]
    pub agent: AgentFlags,

    /// Directory holding one sub-directory per problem.
    pub problems: PathBuf,

    /// Where working directories, transcripts and the report go.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Replay `<DIR>/<problem id>.jsonl` for each problem.
    #[arg(long, value_name = "DIR", conflicts_with = "record_dir")]
    pub replay_dir: Option<PathBuf>,

    /// Record each problem's exchanges to `<DIR>/<problem id>.jsonl`.
    #[arg(long, value_name = "DIR")]
    pub record_dir: Option<PathBuf>,

    /// Problems run concurrently.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub parallel: Option<u32>,
}

/// Parses `argv` without the program name.
pub fn parse_args<I, T>(argv: I) -> Result<CliInvocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("coder")).chain(argv.into_iter().map(Into::into));
    CliInvocation::try_parse_from(args)
}

fn push_path(out: &mut Vec<String>, flag: &str, value: &Option<PathBuf>) {
    if let Some(v) = value {
        out.push(flag.to_string());
        out.push(v.to_string_lossy().into_owned());
    }
}

fn push_value(out: &mut Vec<String>, flag: &str, value: Option<String>) {
    if let Some(v) = value {
        out.push(flag.to_string());
        out.push(v);
    }
}

impl AgentFlags {
    fn to_argv(&self, out: &mut Vec<String>) {
        push_path(out, "--project", &self.project);
        for p in &self.packages {
            out.push("--with".into());
            out.push(p.clone());
        }
        push_value(out, "--model", self.model.clone());
        push_value(out, "--max-iterations", self.max_iterations.map(|n| n.to_string()));
    }
}

impl CliInvocation {
    /// Renders the invocation back to argv (without the program name).
    pub fn to_argv(&self) -> Vec<String> {
        let mut out = Vec::new();
        push_path(&mut out, "--config", &self.config);
        for _ in 0..self.verbose {
            out.push("-v".into());
        }
        match &self.command {
            Command::Run(run) => {
                out.push("run".into());
                run.agent.to_argv(&mut out);
                push_path(&mut out, "--workdir", &run.workdir);
                push_path(&mut out, "--replay", &run.replay);
                push_path(&mut out, "--record", &run.record);
                push_path(&mut out, "--transcript", &run.transcript);
                if let Some(task) = &run.task {
                    // `--` keeps tasks that start with a dash positional.
                    out.push("--".into());
                    out.push(task.clone());
                }
            }
            Command::Bench(bench) => {
                out.push("bench".into());
                bench.agent.to_argv(&mut out);
                push_path(&mut out, "--out", &bench.out);
                push_path(&mut out, "--replay-dir", &bench.replay_dir);
                push_path(&mut out, "--record-dir", &bench.record_dir);
                push_value(&mut out, "--parallel", bench.parallel.map(|n| n.to_string()));
                out.push("--".into());
                out.push(bench.problems.to_string_lossy().into_owned());
            }
        }
        out
    }
}

/// `coder.toml`. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub request_timeout_secs: Option<f64>,
    pub truncation_limit: Option<usize>,
    pub max_iterations: Option<u32>,
    pub launch_timeout_secs: Option<f64>,
    pub execute_timeout_secs: Option<f64>,
    pub solution_timeout_secs: Option<f64>,
    /// Kernel argv; `{connection_file}` is substituted.
    pub kernel_command: Option<Vec<String>>,
    /// Wrap kernels in an ephemeral uv environment when packages are
    /// requested (default true).
    pub use_uv: Option<bool>,
    /// Code that runs a solution script in the kernel; `{script}` is
    /// substituted.
    pub solution_runner: Option<String>,
    pub checker_interpreter: Option<Vec<String>>,
    pub parallelism: Option<u32>,
}

impl FileConfig {
    /// Reads `explicit`, or `./coder.toml` when it exists.
    pub fn load(explicit: Option<&Path>) -> Result<Self, String> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let default = PathBuf::from(CONFIG_FILE);
                if !default.is_file() {
                    return Ok(Self::default());
                }
                default
            }
        };
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn live(&self) -> LiveConfig {
        let mut live = LiveConfig::default();
        if let Some(url) = &self.base_url {
            live.base_url = url.clone();
        }
        if let Some(env) = &self.api_key_env {
            live.api_key_env = env.clone();
        }
        live.temperature = self.temperature;
        live.max_tokens = self.max_tokens;
        live
    }

    pub fn launch(&self) -> LaunchSpec {
        let mut spec = LaunchSpec::default();
        if let Some(cmd) = &self.kernel_command {
            spec.kernel_command = cmd.clone();
        }
        if self.use_uv == Some(false) {
            spec.env_wrapper = None;
        } else if spec.env_wrapper.is_none() {
            spec.env_wrapper = Some(EnvWrapper::default());
        }
        if let Some(s) = self.launch_timeout_secs {
            spec.launch_timeout = Duration::from_secs_f64(s);
        }
        if let Some(s) = self.execute_timeout_secs {
            spec.execute_timeout = Duration::from_secs_f64(s);
        }
        spec
    }

    fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.unwrap_or(600.0))
    }

    fn transport(&self) -> Result<Arc<dyn HttpTransport>, String> {
        ReqwestTransport::new(self.request_timeout())
            .map(|t| Arc::new(t) as Arc<dyn HttpTransport>)
            .map_err(|e| e.message)
    }

    fn session(&self, workdir: PathBuf, flags: &AgentFlags) -> SessionConfig {
        let mut cfg = SessionConfig::new(workdir);
        cfg.project_prompt = flags.project.clone();
        cfg.packages = flags.packages.clone();
        if let Some(model) = flags.model.clone().or_else(|| self.model.clone()) {
            cfg.model = model;
        }
        if let Some(n) = flags.max_iterations.or(self.max_iterations) {
            cfg.max_iterations = n;
        }
        if let Some(limit) = self.truncation_limit {
            cfg.truncation_limit = limit;
        }
        cfg
    }
}

/// Executes a parsed invocation and returns the process exit code.
pub fn execute(invocation: &CliInvocation) -> u8 {
    let file = match FileConfig::load(invocation.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("coder: invalid configuration: {e}");
            return EXIT_USAGE;
        }
    };
    coder_core::kernel::install_exit_hook();
    let code = match &invocation.command {
        Command::Run(args) => run(args, &file),
        Command::Bench(args) => run_bench(args, &file),
    };
    coder_core::kernel::shutdown_registered_kernels();
    code
}

fn provider_exit(e: &ProviderError) -> u8 {
    if matches!(e, ProviderError::Config(_) | ProviderError::Recording { .. }) {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn run(args: &RunArgs, file: &FileConfig) -> u8 {
    let workdir = match &args.workdir {
        Some(w) => w.clone(),
        None => std::env::current_dir().unwrap_or_else(|_| PathBuf::from(".")),
    };
    let mut config = file.session(workdir, &args.agent);
    config.task = args.task.clone();
    config.transcript_path = args.transcript.clone();
    config.provider_mode = match (&args.replay, &args.record) {
        (Some(path), _) => ProviderMode::Replay(path.clone()),
        (None, Some(path)) => ProviderMode::Record(path.clone()),
        (None, None) => ProviderMode::Live,
    };
    let workdir = match config.validate() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("coder: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = coder_core::prompt::load_bundle(&config) {
        eprintln!("coder: {e}");
        return EXIT_USAGE;
    }

    let transport = match file.transport() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("coder: cannot set up HTTP client: {e}");
            return EXIT_FAILURE;
        }
    };
    let provider = match build_provider(&config.provider_mode, file.live(), transport) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("coder: {e}");
            return provider_exit(&e);
        }
    };

    let manager = KernelManager::new(file.launch());
    let executor = KernelExecutor::new(manager.clone(), ExecutionContext::new(&workdir, config.packages.clone()));
    let result = run_session(&config, provider.as_ref(), Some(Box::new(executor)));
    manager.shutdown_all();

    match result {
        Ok(outcome) => {
            if !outcome.final_text.is_empty() {
                println!("{}", outcome.final_text);
            }
            for w in &outcome.warnings {
                eprintln!("coder: warning: {w}");
            }
            if let Some(e) = &outcome.error {
                eprintln!("coder: {e}");
            }
            eprintln!(
                "coder: {} after {} iteration(s); tokens in/out {}/{}; transcript {}",
                outcome.status,
                outcome.iterations,
                outcome.usage.input_tokens,
                outcome.usage.output_tokens,
                outcome.transcript_path.display()
            );
            if outcome.status == SessionStatus::Completed {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e @ (SessionError::Config(_) | SessionError::Prompt(_))) => {
            eprintln!("coder: {e}");
            EXIT_USAGE
        }
    }
}

fn live_factory(file: &FileConfig, record_dir: Option<PathBuf>) -> Result<ProviderFactory, String> {
    let transport = file.transport()?;
    let live = file.live();
    // Fail early on a missing key rather than once per problem.
    OpenAiCompatible::new(live.clone(), transport.clone()).map_err(|e| e.to_string())?;
    Ok(Arc::new(move |case: &bench::ProblemCase| {
        let inner = OpenAiCompatible::new(live.clone(), transport.clone())?;
        Ok(match &record_dir {
            Some(dir) => Box::new(Recorder::create(inner, &dir.join(format!("{}.jsonl", case.id)))?)
                as Box<dyn ModelProvider>,
            None => Box::new(inner),
        })
    }))
}

fn run_bench(args: &BenchArgs, file: &FileConfig) -> u8 {
    if !args.problems.is_dir() {
        eprintln!("coder: problems directory {} not found", args.problems.display());
        return EXIT_USAGE;
    }
    let provider = match &args.replay_dir {
        Some(dir) => bench::replay_from_dir(dir.clone()),
        None => match live_factory(file, args.record_dir.clone()) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("coder: {e}");
                return EXIT_USAGE;
            }
        },
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("bench-out"));
    let mut config = BenchConfig::new(&out, provider);
    config.session = file.session(out.clone(), &args.agent);
    config.launch = file.launch();
    if let Some(s) = file.solution_timeout_secs {
        config.solution_timeout = Duration::from_secs_f64(s);
    }
    if let Some(r) = &file.solution_runner {
        config.runner = r.clone();
    }
    if let Some(i) = &file.checker_interpreter {
        config.validator = ValidatorConfig {
            interpreter: i.clone(),
            ..ValidatorConfig::default()
        };
    }
    config.parallelism = args.parallel.or(file.parallelism).unwrap_or(1) as usize;

    let report = match bench::run_benchmark(&args.problems, &config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("coder: cannot read {}: {e}", args.problems.display());
            return EXIT_USAGE;
        }
    };
    if let Err(e) = report.write(&out) {
        eprintln!("coder: cannot write report to {}: {e}", out.display());
        return EXIT_FAILURE;
    }
    print!("{}", bench::emit_stats_table(&report.stats));
    for v in report.verdicts.iter().filter(|v| !v.passed()) {
        let kind = v.failure.map(|k| format!("{k:?}")).unwrap_or_default();
        eprintln!("coder: {} failed ({kind}): {}", v.problem_id, v.details);
    }
    eprintln!(
        "coder: {}/{} passed; report in {}",
        report.passed(),
        report.verdicts.len(),
        out.display()
    );
    if report.passed() == report.verdicts.len() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}
