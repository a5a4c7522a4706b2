use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use convrank::cli::{run, Cli};

/// Runs a parsed command; errors come back as a single line (the cause chain joined by ": ").
fn execute(cli: Cli) -> Result<String, String> {
    run(cli).map_err(|err| format!("error: {err:#}").replace('\n', " "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(line) => {
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
