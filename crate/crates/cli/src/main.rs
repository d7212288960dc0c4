mod args;
mod cache;
mod commands;
mod run_config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::{CmdError, Exit};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Exit::Ok,
                _ => Exit::Usage,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(&cli.command) {
        Ok(c) => c,
        Err(e) if e.is_broken_pipe() => Exit::Ok,
        Err(e) => {
            eprintln!("whittle: {e}");
            e.exit()
        }
    };
    ExitCode::from(code as u8)
}

fn run(cmd: &Command) -> Result<Exit, CmdError> {
    let cfg = args::resolve(cmd).map_err(CmdError::Usage)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmdError::Usage(format!("cannot set thread count: {e}")))?;
    }
    match cmd {
        Command::Index(_) => commands::index(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
        Command::Metrics(_) => commands::metrics(&cfg),
        Command::Frontier(_) => commands::frontier(&cfg),
        Command::Rmabp(_) => commands::rmabp(&cfg),
    }
}
