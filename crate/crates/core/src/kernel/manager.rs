//! Kernel launch and the context-keyed singleton.

use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, MutexGuard, OnceLock, Weak};
use std::time::{Duration, Instant};

use tracing::{debug, info, warn};

use super::client::KernelClient;
use super::connection::{private_dir, ConnectionInfo};
use super::{CodeExecutor, ExecutionContext, ExecutionResult, KernelError};

pub const CONNECTION_FILE_PLACEHOLDER: &str = "{connection_file}";
pub const PACKAGE_PLACEHOLDER: &str = "{package}";

/// Command prefix that runs the kernel inside an ephemeral environment
/// containing the context's packages.
///
/// The launched argv is `prefix + per_package(p) for each p + kernel command`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvWrapper {
    pub prefix: Vec<String>,
    /// Arguments added once per package; `{package}` is substituted.
    pub per_package: Vec<String>,
}

impl Default for EnvWrapper {
    fn default() -> Self {
        Self {
            prefix: ["uv", "run", "--no-project", "--isolated", "--with", "ipykernel"]
                .map(String::from)
                .to_vec(),
            per_package: ["--with", PACKAGE_PLACEHOLDER].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LaunchSpec {
    /// Kernel argv; `{connection_file}` is substituted.
    pub kernel_command: Vec<String>,
    pub env_wrapper: Option<EnvWrapper>,
    pub kernel_name: String,
    pub launch_timeout: Duration,
    pub execute_timeout: Duration,
    pub shutdown_grace: Duration,
}

impl Default for LaunchSpec {
    fn default() -> Self {
        Self {
            kernel_command: ["python3", "-m", "ipykernel_launcher", "-f", CONNECTION_FILE_PLACEHOLDER]
                .map(String::from)
                .to_vec(),
            env_wrapper: Some(EnvWrapper::default()),
            kernel_name: "python3".into(),
            launch_timeout: Duration::from_secs(30),
            execute_timeout: Duration::from_secs(120),
            shutdown_grace: Duration::from_secs(3),
        }
    }
}

impl LaunchSpec {
    /// The argv to spawn for `ctx`, and whether it goes through the wrapper.
    pub fn argv(&self, ctx: &ExecutionContext, connection_file: &str) -> (Vec<String>, bool) {
        let kernel = self
            .kernel_command
            .iter()
            .map(|a| a.replace(CONNECTION_FILE_PLACEHOLDER, connection_file));
        match &self.env_wrapper {
            Some(wrapper) if !ctx.packages().is_empty() => {
                let mut argv = wrapper.prefix.clone();
                for package in ctx.packages() {
                    argv.extend(wrapper.per_package.iter().map(|a| a.replace(PACKAGE_PLACEHOLDER, package)));
                }
                argv.extend(kernel);
                (argv, true)
            }
            _ => (kernel.collect(), false),
        }
    }
}

type SpawnRequest = (Command, mpsc::Sender<io::Result<Child>>);

/// Spawns `command` from a thread that lives as long as the process.
///
/// The parent-death signal fires when the thread that forked the child
/// exits, not the process, so kernels must not be started from
/// short-lived worker threads.
fn spawn_from_spawner(command: Command) -> io::Result<Child> {
    static SPAWNER: OnceLock<Mutex<mpsc::Sender<SpawnRequest>>> = OnceLock::new();
    let sender = SPAWNER.get_or_init(|| {
        let (tx, rx) = mpsc::channel::<SpawnRequest>();
        std::thread::Builder::new()
            .name("kernel-spawner".into())
            .spawn(move || {
                for (mut command, reply) in rx {
                    let _ = reply.send(command.spawn());
                }
            })
            .expect("spawn kernel-spawner thread");
        Mutex::new(tx)
    });
    let (reply_tx, reply_rx) = mpsc::channel();
    lock(sender)
        .send((command, reply_tx))
        .map_err(|_| io::Error::other("kernel spawner thread is gone"))?;
    reply_rx
        .recv()
        .map_err(|_| io::Error::other("kernel spawner thread is gone"))?
}

static NEXT_KERNEL_ID: AtomicU64 = AtomicU64::new(1);

struct Kernel {
    id: u64,
    ctx: ExecutionContext,
    info: ConnectionInfo,
    pid: u32,
    client: Mutex<KernelClient>,
    child: Mutex<Child>,
    dir: PathBuf,
    log_path: PathBuf,
    suspect: AtomicBool,
    shut_down: AtomicBool,
    grace: Duration,
}

impl Kernel {
    fn exit_reason(child: &mut Child, log_path: &std::path::Path) -> Option<String> {
        match child.try_wait() {
            Ok(Some(status)) => Some(format!("kernel process exited ({status}){}", log_tail(log_path))),
            Ok(None) => None,
            Err(e) => Some(format!("cannot query kernel process: {e}")),
        }
    }

    fn shutdown(&self) {
        if self.shut_down.swap(true, Ordering::SeqCst) {
            return;
        }
        debug!(id = self.id, pid = self.pid, "shutting down kernel");
        let running = || matches!(lock(&self.child).try_wait(), Ok(None));
        // An execute in flight holds the client; skip straight to the kill.
        if running() {
            if let Ok(mut client) = self.client.try_lock() {
                if let Err(e) = client.request_shutdown(self.grace / 2) {
                    debug!(id = self.id, error = %e, "no shutdown_reply");
                }
                let deadline = Instant::now() + self.grace;
                while Instant::now() < deadline && running() {
                    std::thread::sleep(Duration::from_millis(20));
                }
            }
        }
        // Also reaps helpers started by a wrapper (same process group).
        kill_group(self.pid, libc::SIGKILL);
        let mut child = lock(&self.child);
        if matches!(child.try_wait(), Ok(None)) {
            let _ = child.kill();
        }
        let _ = child.wait();
        let _ = fs::remove_dir_all(&self.dir);
    }
}

impl Drop for Kernel {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn kill_group(pid: u32, signal: libc::c_int) {
    // SAFETY: plain syscall; the group id is the child's pid (set at spawn).
    unsafe {
        libc::kill(-(pid as libc::pid_t), signal);
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn log_tail(path: &std::path::Path) -> String {
    let mut file = match File::open(path) {
        Ok(f) => f,
        Err(_) => return String::new(),
    };
    let len = file.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = file.seek(SeekFrom::Start(len.saturating_sub(2000)));
    let mut tail = String::new();
    let _ = file.read_to_string(&mut tail);
    let tail = tail.trim();
    if tail.is_empty() {
        String::new()
    } else {
        format!(": {tail}")
    }
}

/// A live kernel. Clones share the same process.
#[derive(Clone)]
pub struct KernelHandle(Arc<Kernel>);

impl std::fmt::Debug for KernelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelHandle")
            .field("id", &self.0.id)
            .field("pid", &self.0.pid)
            .field("context", &self.0.ctx)
            .finish()
    }
}

impl PartialEq for KernelHandle {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl KernelHandle {
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn pid(&self) -> u32 {
        self.0.pid
    }

    pub fn context(&self) -> &ExecutionContext {
        &self.0.ctx
    }

    pub fn connection_info(&self) -> &ConnectionInfo {
        &self.0.info
    }

    pub fn is_alive(&self) -> bool {
        !self.0.shut_down.load(Ordering::SeqCst) && matches!(lock(&self.0.child).try_wait(), Ok(None))
    }

    /// Set after a timeout; the next `ensure_kernel` replaces the kernel.
    pub fn is_suspect(&self) -> bool {
        self.0.suspect.load(Ordering::SeqCst)
    }

    pub fn heartbeat(&self, timeout: Duration) -> bool {
        lock(&self.0.client).heartbeat(timeout)
    }

    /// Executes `code`. Calls on one handle are serialized.
    pub fn execute(&self, code: &str, timeout: Duration) -> Result<ExecutionResult, KernelError> {
        if self.0.shut_down.load(Ordering::SeqCst) {
            return Err(KernelError::Dead("kernel was shut down".into()));
        }
        let mut client = lock(&self.0.client);
        let kernel = &self.0;
        let mut alive = || Kernel::exit_reason(&mut lock(&kernel.child), &kernel.log_path);
        let out = client.execute(code, timeout, &mut alive);
        if matches!(out, Err(KernelError::Timeout(_)) | Err(KernelError::Dead(_))) {
            self.0.suspect.store(true, Ordering::SeqCst);
        }
        out
    }

    /// Idempotent: control-channel shutdown, then kill after the grace period.
    pub fn shutdown(&self) {
        self.0.shutdown();
    }
}

/// Holds at most one live kernel; asking for a different context replaces it.
pub struct KernelManager {
    spec: LaunchSpec,
    slot: Mutex<Option<KernelHandle>>,
    launches: AtomicUsize,
}

fn registry() -> &'static Mutex<Vec<Weak<KernelManager>>> {
    static MANAGERS: OnceLock<Mutex<Vec<Weak<KernelManager>>>> = OnceLock::new();
    MANAGERS.get_or_init(Default::default)
}

/// Shuts down the kernels of every manager created with
/// [`KernelManager::new`]. Call on the way out of the process.
pub fn shutdown_registered_kernels() {
    let managers: Vec<Arc<KernelManager>> = {
        let mut list = lock(registry());
        list.retain(|w| w.strong_count() > 0);
        list.iter().filter_map(Weak::upgrade).collect()
    };
    for manager in managers {
        manager.shutdown_all();
    }
}

extern "C" fn exit_hook() {
    shutdown_registered_kernels();
}

/// Registers an `atexit` hook that shuts all kernels down. Idempotent.
pub fn install_exit_hook() {
    static INSTALLED: OnceLock<()> = OnceLock::new();
    INSTALLED.get_or_init(|| {
        // SAFETY: registering a plain extern "C" function.
        unsafe {
            libc::atexit(exit_hook);
        }
    });
}

impl KernelManager {
    pub fn new(spec: LaunchSpec) -> Arc<Self> {
        let manager = Arc::new(Self {
            spec,
            slot: Mutex::new(None),
            launches: AtomicUsize::new(0),
        });
        lock(registry()).push(Arc::downgrade(&manager));
        install_exit_hook();
        manager
    }

    pub fn spec(&self) -> &LaunchSpec {
        &self.spec
    }

    /// Number of kernel processes this manager has started.
    pub fn launch_count(&self) -> usize {
        self.launches.load(Ordering::SeqCst)
    }

    pub fn current(&self) -> Option<KernelHandle> {
        lock(&self.slot).clone()
    }

    /// Returns the live kernel for `ctx`, launching one if needed. A kernel
    /// for another context, a dead kernel or one that timed out is shut
    /// down first. Racing callers are serialized on the slot.
    pub fn ensure_kernel(&self, ctx: &ExecutionContext) -> Result<KernelHandle, KernelError> {
        let mut slot = lock(&self.slot);
        if let Some(handle) = slot.as_ref() {
            if handle.context() == ctx && handle.is_alive() && !handle.is_suspect() {
                return Ok(handle.clone());
            }
            info!(id = handle.id(), "replacing kernel");
            handle.shutdown();
            *slot = None;
        }
        let handle = self.launch(ctx)?;
        *slot = Some(handle.clone());
        Ok(handle)
    }

    pub fn shutdown(&self, handle: &KernelHandle) {
        handle.shutdown();
        let mut slot = lock(&self.slot);
        if slot.as_ref() == Some(handle) {
            *slot = None;
        }
    }

    pub fn shutdown_all(&self) {
        if let Some(handle) = lock(&self.slot).take() {
            handle.shutdown();
        }
    }

    fn launch(&self, ctx: &ExecutionContext) -> Result<KernelHandle, KernelError> {
        if !ctx.workdir.is_dir() {
            return Err(KernelError::Launch(format!(
                "working directory {} does not exist",
                ctx.workdir.display()
            )));
        }
        let dir = private_dir("coder-kernel")?;
        let result = self.spawn_in(ctx, &dir);
        if result.is_err() {
            let _ = fs::remove_dir_all(&dir);
        }
        result
    }

    fn spawn_in(&self, ctx: &ExecutionContext, dir: &std::path::Path) -> Result<KernelHandle, KernelError> {
        let info = ConnectionInfo::allocate(&self.spec.kernel_name)?;
        let conn_path = dir.join("kernel.json");
        info.write(&conn_path)?;
        let log_path = dir.join("kernel.log");
        let log = File::create(&log_path)?;

        let (argv, wrapped) = self.spec.argv(ctx, &conn_path.to_string_lossy());
        let failure = |msg: String| {
            if wrapped {
                KernelError::Provision(msg)
            } else {
                KernelError::Launch(msg)
            }
        };
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| KernelError::Launch("empty kernel command".into()))?;
        let mut command = Command::new(program);
        command
            .args(args)
            .current_dir(&ctx.workdir)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0);
        // SAFETY: only async-signal-safe calls between fork and exec.
        unsafe {
            command.pre_exec(|| {
                if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGTERM) != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let mut child =
            spawn_from_spawner(command).map_err(|e| failure(format!("cannot start `{program}`: {e}")))?;
        let pid = child.id();
        self.launches.fetch_add(1, Ordering::SeqCst);
        info!(pid, workdir = %ctx.workdir.display(), packages = ?ctx.packages(), "kernel launched");

        let mut client = match KernelClient::connect(&info) {
            Ok(c) => c,
            Err(e) => {
                kill_group(pid, libc::SIGKILL);
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        };
        let ready = {
            let mut alive = || Kernel::exit_reason(&mut child, &log_path);
            client.wait_ready(self.spec.launch_timeout, &mut alive)
        };
        if let Err(e) = ready {
            warn!(pid, error = %e, "kernel failed readiness probe");
            kill_group(pid, libc::SIGKILL);
            let _ = child.kill();
            let _ = child.wait();
            return Err(match e {
                KernelError::Launch(msg) => failure(msg),
                other => other,
            });
        }
        Ok(KernelHandle(Arc::new(Kernel {
            id: NEXT_KERNEL_ID.fetch_add(1, Ordering::SeqCst),
            ctx: ctx.clone(),
            info,
            pid,
            client: Mutex::new(client),
            child: Mutex::new(child),
            dir: dir.to_path_buf(),
            log_path,
            suspect: AtomicBool::new(false),
            shut_down: AtomicBool::new(false),
            grace: self.spec.shutdown_grace,
        })))
    }
}

/// `python_exec` backend: lazily ensures the context's kernel on each call.
pub struct KernelExecutor {
    manager: Arc<KernelManager>,
    ctx: ExecutionContext,
    timeout: Duration,
}

impl KernelExecutor {
    pub fn new(manager: Arc<KernelManager>, ctx: ExecutionContext) -> Self {
        let timeout = manager.spec().execute_timeout;
        Self {
            manager,
            ctx,
            timeout,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl CodeExecutor for KernelExecutor {
    fn execute(&mut self, code: &str) -> Result<ExecutionResult, KernelError> {
        let handle = self.manager.ensure_kernel(&self.ctx)?;
        handle.execute(code, self.timeout)
    }
}
