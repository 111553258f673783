use std::process::ExitCode;

use afem_cli::{configure_threads, resolve_config, run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads()
        .and_then(|_| resolve_config(&cli))
        .and_then(|(cfg, text)| run(&cfg, text.as_deref()));
    match result {
        Ok(out) => {
            println!("{}", out.summary);
            println!("outputs in {}", out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
