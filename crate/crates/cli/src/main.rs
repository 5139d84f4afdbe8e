use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use norm_forge::{Overrides, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Ingest,
    Elicit,
    Aggregate,
    Validate,
    Substitute,
    Reliability,
    ErrorAnalysis,
    Report,
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Elicit => Stage::Elicit,
            Command::Aggregate => Stage::Aggregate,
            Command::Validate => Stage::Validate,
            Command::Substitute => Stage::Substitute,
            Command::Reliability => Stage::Reliability,
            Command::ErrorAnalysis => Stage::ErrorAnalysis,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

/// Generate psycholinguistic norms with language models and validate them
/// against human norms.
///
/// Exit codes: 1 other error, 2 config error, 3 missing prerequisite,
/// 4 elicitation failure, 5 degenerate analysis.
#[derive(Debug, Parser)]
#[command(name = "norm-forge", version)]
struct Cli {
    /// Stage to run; `all` runs every stage in order.
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one study, dimension or model.
    #[arg(long)]
    only: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        only: cli.only,
    };
    match norm_forge::run(&cli.config, &overrides, cli.command.into()) {
        Ok(notices) => {
            for n in notices {
                eprintln!("notice: {n}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
