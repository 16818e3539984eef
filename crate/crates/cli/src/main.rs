//! `esaa`: operator front end. Machine output goes to stdout, diagnostics to
//! stderr. Exit codes: 0 ok, 1 operational error, 2 verify mismatch,
//! 3 corrupted log, 4 submission rejected.

mod cli;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are operational; 2 is reserved for verify mismatch.
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_OPERATIONAL
            } else {
                commands::EXIT_OK
            });
        }
    };
    match commands::execute(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout
                .write_all(out.stdout.as_bytes())
                .and_then(|()| stdout.flush())
                .is_err()
            {
                return ExitCode::from(commands::EXIT_OPERATIONAL);
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("esaa: {e:#}");
            ExitCode::from(commands::failure_code(&e))
        }
    }
}
