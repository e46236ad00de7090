use std::process::ExitCode;

use clap::Parser;
use mongeampere_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if !out.stdout.is_empty() {
                println!("{}", out.stdout.trim_end());
            }
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            let code = e.exit_code();
            if code == 3 {
                let diag = serde_json::json!({ "converged": false, "error": e.to_string() });
                println!("{}", serde_json::to_string_pretty(&diag).expect("json"));
            }
            eprintln!("error: {e}");
            ExitCode::from(code as u8)
        }
    }
}
