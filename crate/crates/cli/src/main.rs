use std::process::ExitCode;

use clap::Parser;
use smallgain_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            match report.failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("smallgain: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Err(e) => {
            eprintln!("smallgain: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
