//! Stand-alone mock kernel: `mock-kernel -f <connection-file> [--noise]
//! [--startup-delay-ms N] [--ignore-shutdown]`. Runs in the current
//! directory.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use coder_core::kernel::mock::{MockKernel, MockOptions};
use coder_core::kernel::ConnectionInfo;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let mut connection_file: Option<PathBuf> = None;
    let mut options = MockOptions::default();
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "-f" | "--connection-file" => connection_file = args.next().map(PathBuf::from),
            "--noise" => options.noise = true,
            "--ignore-shutdown" => options.ignore_shutdown = true,
            "--startup-delay-ms" => {
                let ms = args.next().and_then(|v| v.parse().ok()).unwrap_or(0);
                options.startup_delay = Duration::from_millis(ms);
            }
            other => {
                eprintln!("mock-kernel: unknown argument {other}");
                return ExitCode::from(2);
            }
        }
    }
    let Some(path) = connection_file else {
        eprintln!("usage: mock-kernel -f <connection-file>");
        return ExitCode::from(2);
    };
    let info = match ConnectionInfo::read(&path) {
        Ok(info) => info,
        Err(e) => {
            eprintln!("mock-kernel: cannot read {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
    let result = MockKernel::bind(&info, cwd, options).and_then(MockKernel::serve);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-kernel: {e}");
            ExitCode::FAILURE
        }
    }
}
