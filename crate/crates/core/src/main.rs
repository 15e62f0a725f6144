use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ddm::pipeline::{exit_code, report, Outcome, Pipeline, PipelineConfig, RunOptions, Stage};
use ddm::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    Cluster,
    Train,
    Distill,
    Evaluate,
    Diagnose,
    Oracle,
    Report,
}

/// Distilled-datamodel attribution pipeline.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    verb: Verb,
    /// Pipeline config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute even when existing artifacts came from another config.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> ddm::Result<()> {
    if let (Verb::Report, None) = (cli.verb, &cli.config) {
        let out = cli.out.ok_or_else(|| Error::InvalidArgument("report needs --out or --config".into()))?;
        return report(&out);
    }
    let path = cli
        .config
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::InvalidArgument("no output directory: pass --out or set `out`".into()))?;
    let p = Pipeline::new(
        cfg,
        RunOptions {
            out,
            force: cli.force,
            workers: cli.workers.max(1),
        },
    )?;
    let stage = match cli.verb {
        Verb::Cluster => Stage::Cluster,
        Verb::Train => Stage::Train,
        Verb::Distill => Stage::Distill,
        Verb::Evaluate => Stage::Evaluate,
        Verb::Diagnose => Stage::Diagnose,
        Verb::Oracle => Stage::Oracle,
        Verb::Report => return report(&p.opts.out),
    };
    match p.run(stage)? {
        Outcome::Computed => eprintln!("{}: done -> {}", stage.name(), p.dir(stage).display()),
        Outcome::Cached => eprintln!("{}: up to date (cached)", stage.name()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
