//! End-to-end pipeline behind the `norm-forge` command: ingest a corpus,
//! elicit ratings, aggregate them, run the validation analyses and write a
//! report with plots.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod plots;
pub mod report;
pub mod stages;

use std::path::Path;

pub use config::{LoadedConfig, Overrides, RunConfig};
pub use error::{FailureKind, PipelineError};
pub use stages::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
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

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::Elicit,
        Stage::Aggregate,
        Stage::Validate,
        Stage::Substitute,
        Stage::Reliability,
        Stage::ErrorAnalysis,
        Stage::Report,
    ];
}

fn run_stage(ctx: &mut Context, stage: Stage, strict: bool) -> error::Result<()> {
    match stage {
        Stage::Ingest => stages::ingest(ctx),
        Stage::Elicit => stages::elicit(ctx),
        Stage::Aggregate => stages::aggregate(ctx),
        Stage::Validate => stages::validate(ctx),
        Stage::Substitute => stages::substitute(ctx),
        Stage::Reliability => stages::reliability(ctx, strict),
        Stage::ErrorAnalysis => stages::error_analysis(ctx),
        Stage::Report => report::report(ctx),
        Stage::All => {
            for s in Stage::PIPELINE {
                run_stage(ctx, s, false)?;
            }
            Ok(())
        }
    }
}

/// Load the config and run `stage`. Returns the notices collected on the way.
pub fn run(config_path: &Path, overrides: &Overrides, stage: Stage) -> Result<Vec<String>, PipelineError> {
    let loaded = LoadedConfig::load(config_path, overrides)?;
    let mut ctx = Context::new(loaded);
    run_stage(&mut ctx, stage, true)?;
    Ok(ctx.notices)
}
