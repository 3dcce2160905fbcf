use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use pmq_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    // a closed pipe on either stream is not worth a panic
    match run(&cli) {
        Ok(v) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
