use std::process::ExitCode;

use clap::Parser;
use ibetls::cli::{self, Cli};

fn main() -> ExitCode {
    let level = Cli::try_parse()
        .ok()
        .and_then(|c| cli::load_config(&c).ok())
        .map(|c| c.log_level)
        .unwrap_or_else(|| "warn".into());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = cli::run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}
