use std::io;
use std::process::ExitCode;

use clap::Parser;
use crsqn_cli::{execute, Cli, EXIT_CONFIG};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CRSQN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let mut stdout = io::stdout().lock();
    ExitCode::from(execute(&cli, &mut stdout))
}
