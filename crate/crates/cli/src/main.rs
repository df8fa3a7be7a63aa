use std::io::Write;

use clap::Parser;
use gamps_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            let mut out = std::io::stdout().lock();
            for f in files {
                if writeln!(out, "{}", f.display()).is_err() {
                    break;
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(e.exit_code());
        }
    }
}
