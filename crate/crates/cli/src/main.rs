mod args;
mod commands;
mod manifest;
mod plots;

use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(name, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

/// One JSON object on one line.
fn report_error(command: &str, message: &str) {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    let line = serde_json::json!({ "command": command, "error": flat });
    eprintln!("{line}");
}
