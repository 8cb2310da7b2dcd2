mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Why a command failed; decides the exit status.
pub enum Failure {
    /// Bad flags, invalid configuration or missing inputs. Exit 2.
    Usage(anyhow::Error),
    /// Anything that went wrong after the inputs were accepted. Exit 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn report(kind: &str, message: String, causes: Vec<String>) {
    let err = serde_json::json!({ "error": kind, "message": message, "causes": causes });
    eprintln!("{err}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let text = e.render().to_string();
                    let message = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
                    report("usage", message.to_string(), text.lines().skip(1).map(str::to_string).collect());
                    ExitCode::from(2)
                }
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (kind, err, code) = match failure {
                Failure::Usage(e) => ("usage", e, 2),
                Failure::Runtime(e) => ("runtime", e, 1),
            };
            report(kind, err.to_string(), err.chain().skip(1).map(|c| c.to_string()).collect());
            ExitCode::from(code)
        }
    }
}
