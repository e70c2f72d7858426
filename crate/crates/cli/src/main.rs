use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;
use vien_cli::app::{run, Cli};

fn main() -> ExitCode {
    // exit quietly when stdout is a closed pipe, as in `vien inspect m.gguf | head`
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("VIEN_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
