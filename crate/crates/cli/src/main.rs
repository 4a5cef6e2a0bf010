use std::path::PathBuf;
use std::process::ExitCode;

use appgen_core::config::RunConfig;
use appgen_core::pipeline::{Pipeline, RunOptions, Stage, StageOutcome};
use appgen_core::Error;
use clap::{Parser, Subcommand};

/// Synthesizes app-usage sequences along mobility trajectories and
/// evaluates them against the real corpus.
#[derive(Parser, Debug)]
#[command(name = "appgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file of `section.key = value` lines; defaults apply otherwise.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Global seed (overrides the config file and APPGEN_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory (shorthand for `paths.run_dir=DIR`).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Rerun stages whose outputs already exist.
    #[arg(long, global = true)]
    force: bool,

    /// Accept inputs produced under a different config hash.
    #[arg(long, global = true)]
    allow_hash_mismatch: bool,

    /// Config overrides as `key=value`.
    #[arg(global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic world: dataset, categories and urban KG.
    GenWorld,
    /// Train skip-gram app vectors and TuckER location vectors.
    TrainEncoders,
    /// Train the diffusion model and write a checkpoint.
    Train,
    /// Generate apps along the reference trajectories.
    Generate,
    /// Compare generated and real corpora.
    Evaluate,
    /// Write metric, profile, itemset, clustering and downstream reports.
    Report,
    /// Run every stage in order.
    Pipeline,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::GenWorld => vec![Stage::GenWorld],
            Command::TrainEncoders => vec![Stage::TrainEncoders],
            Command::Train => vec![Stage::Train],
            Command::Generate => vec![Stage::Generate],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Report => vec![Stage::Report],
            Command::Pipeline => Stage::ALL.to_vec(),
        }
    }
}

fn fail(code: u8, e: &Error) -> ExitCode {
    eprintln!("error[{}]: {e}", e.tag());
    ExitCode::from(code)
}

fn build_config(cli: &Cli) -> appgen_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(dir) = &cli.run_dir {
        cfg.paths.run_dir = dir.clone();
    }
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let options = RunOptions {
        force: cli.force,
        allow_hash_mismatch: cli.allow_hash_mismatch,
    };
    // anything wrong with the configuration is a usage error
    let pipeline = match build_config(&cli).and_then(|cfg| Pipeline::new(cfg, options)) {
        Ok(p) => p,
        Err(e) => return fail(2, &e),
    };
    println!("config {}", pipeline.config_hash());
    for stage in cli.command.stages() {
        match pipeline.run_stage(stage) {
            Ok(StageOutcome::Ran) => println!("{stage}: done"),
            Ok(StageOutcome::Skipped) => println!("{stage}: up to date"),
            Err(e) => return fail(1, &e),
        }
    }
    ExitCode::SUCCESS
}
