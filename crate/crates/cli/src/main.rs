use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use lowrank_duel_cli::commands::{output_path, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|outcome| {
        match output_path(&cli)? {
            Some(path) => std::fs::write(&path, &outcome.body).map_err(lowrank_duel::Error::from)?,
            None => std::io::stdout()
                .write_all(outcome.body.as_bytes())
                .map_err(lowrank_duel::Error::from)?,
        }
        Ok(outcome.code)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("lowrank-duel: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
