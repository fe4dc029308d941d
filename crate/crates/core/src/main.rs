use std::process::ExitCode;

use clap::Parser;
use dampns::app::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            if outcome.failed {
                eprintln!("dampns: one or more properties failed");
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("dampns: {e}");
            ExitCode::from(2)
        }
    }
}
