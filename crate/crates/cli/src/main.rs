use std::process::ExitCode;

use clap::Parser;
use wisense_cli::{execute, exit, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).parse_env("RUST_LOG").init();
    match cli.threads {
        Some(n) => wisense_tensor::parallel::set_threads(n),
        None => {
            wisense_tensor::parallel::init_from_env();
        }
    }
    match execute(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
