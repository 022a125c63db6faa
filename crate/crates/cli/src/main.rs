use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let invocation = match coder_cli::parse_args(std::env::args_os().skip(1)) {
        Ok(inv) => inv,
        // Prints usage; exits 0 for --help/--version and 2 otherwise.
        Err(e) => e.exit(),
    };
    let level = match invocation.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    ExitCode::from(coder_cli::execute(&invocation))
}
