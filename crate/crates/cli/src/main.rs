use std::process::ExitCode;

use clap::Parser;
use mtt_cli::{configure_threads, run, Cli, CliResult};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let resolved = cli.resolve()?;
    let summary = run(&resolved)?;
    for path in &summary.outputs {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
