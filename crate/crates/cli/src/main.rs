use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zeno_core::config::Job;
use zeno_core::runner::{run_config_text, validate_config_text, ExitStatus};
use zeno_core::scenarios::list_scenarios;

/// Decoherent-history experiments on restricted propagators.
#[derive(Parser)]
#[command(name = "zeno", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write report.json, metadata.json and CSV curves.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List bundled scenarios as `id<TAB>description`.
    Scenarios,
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        exit(ExitStatus::Io)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Scenarios => {
            print!("{}", list_scenarios());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            match validate_config_text(&text) {
                Ok(Job::Scenario(spec)) => {
                    println!("ok: scenario {}", spec.id());
                    ExitCode::SUCCESS
                }
                Ok(Job::Experiment(setup)) => {
                    println!("ok: {} experiment, dimension {}", setup.kind.as_str(), setup.model.dim());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(ExitStatus::Config)
                }
            }
        }
        Command::Run { config, out } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let result = run_config_text(&text, Some(&out));
            match result.status {
                ExitStatus::Success => {
                    println!("{}", result.message);
                    for f in &result.files {
                        println!("wrote {}", f.display());
                    }
                }
                _ => eprintln!("error: {}", result.message),
            }
            exit(result.status)
        }
    }
}
