//! `colt`: pipeline driver for repository-level code-completion data.
//! Stages run individually or end to end:
//! ingest, dedup, graph, extract, contexts, prompts, prefs, train-toy,
//! eval, report, or everything via run-all.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use colt_core::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "colt", version, about = "Repository-level code completion data pipeline")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker cap for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Corpus root override.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,

    /// Skip stale-input provenance warnings.
    #[arg(long, global = true)]
    force: bool,

    /// Completion provider endpoint (implies the http provider).
    /// Falls back to the COLT_PROVIDER_URL environment variable.
    #[arg(long = "provider-url", global = true)]
    provider_url: Option<String>,

    /// Provider timeout in seconds.
    #[arg(long = "provider-timeout", global = true)]
    provider_timeout: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the corpus root and apply quality/popularity filters.
    Ingest,
    /// Exact repository dedup plus MinHash/LSH near dedup of files.
    Dedup,
    /// Parse files and build per-repo symbol indexes.
    Graph,
    /// Extract and balance the three completion-task scenarios.
    Extract,
    /// Build dependency and retrieval cross-file contexts.
    Contexts,
    /// Assemble fill-in-the-middle prompts.
    Prompts,
    /// Generate candidates and build preference triples.
    Prefs,
    /// Train the toy model: SFT warm-up then DPO.
    TrainToy,
    /// Score test-split predictions.
    Eval,
    /// Emit summary tables and bucket histograms.
    Report,
    /// Run every stage in order.
    RunAll,
}

impl Command {
    fn stages(&self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::Dedup => vec![Stage::Dedup],
            Command::Graph => vec![Stage::Graph],
            Command::Extract => vec![Stage::Extract],
            Command::Contexts => vec![Stage::Contexts],
            Command::Prompts => vec![Stage::Prompts],
            Command::Prefs => vec![Stage::Prefs],
            Command::TrainToy => vec![Stage::TrainToy],
            Command::Eval => vec![Stage::Eval],
            Command::Report => vec![Stage::Report],
            Command::RunAll => Stage::ALL.to_vec(),
        }
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(corpus) = &cli.corpus {
        config.corpus_root = corpus.clone();
    }
    let env_url = std::env::var("COLT_PROVIDER_URL").ok().filter(|u| !u.is_empty());
    if let Some(url) = cli.provider_url.clone().or(env_url) {
        config.provider.kind = "http".into();
        config.provider.url = Some(url);
    }
    if let Some(timeout) = cli.provider_timeout {
        config.provider.timeout_secs = timeout;
    }
    config.resolve()
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let config = match build_config(&cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("colt: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };

    if config.jobs > 0 {
        // Ignore the error if a pool already exists (e.g. repeated init).
        let _ = rayon_pool(config.jobs);
    }

    let pipeline = Pipeline { config, force: cli.force };
    for stage in cli.command.stages() {
        match pipeline.run_stage(stage) {
            Ok(outcome) => {
                for note in &outcome.notes {
                    eprintln!("[{}] {}", outcome.stage, note);
                }
                for artifact in &outcome.written {
                    println!("[{}] wrote {}", outcome.stage, pipeline.config.out_dir.join(artifact).display());
                }
            }
            Err(e) => {
                eprintln!("colt {}: {e}", stage.name());
                return ExitCode::from(e.exit_code() as u8);
            }
        }
    }
    ExitCode::SUCCESS
}

fn rayon_pool(jobs: usize) -> Result<(), Box<dyn std::error::Error>> {
    colt_core::pipeline::configure_thread_pool(jobs)?;
    Ok(())
}
