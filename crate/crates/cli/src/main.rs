use std::process::ExitCode;

use clap::Parser;
use scpsfm_cli::{run, Cli, EXIT_INVALID};

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for degenerate solves.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
