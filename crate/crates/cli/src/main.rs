//! `attnsel` command-line driver.
//!
//! Settings come from the TOML config given with `--config`; the flags
//! `--output-dir` and `--seed` override the matching config fields, and
//! `--jobs` caps the worker threads. Logs go to stderr (`RUST_LOG` controls
//! verbosity). On failure a single JSON line describing the error is printed
//! to stderr and the process exits with 2 (config), 3 (data) or 4 (external
//! service).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnsel_core::pipeline::{KgBackend, Pipeline, PipelineError, RunConfig, Stage};
use attnsel_core::synth::{write_planted_workspace, PlantedSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "attnsel", version, about = "Attention-derived vs classical feature selection analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Maximum worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also print the stage's main artifact to stdout.
    #[arg(long)]
    stdout: bool,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `folds.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the corpus, build the vocabulary and assign folds.
    Ingest(RunArgs),
    /// Extract most-attended words from the attention dumps.
    Attend(RunArgs),
    /// Rank terms with the classical feature selectors.
    Select(RunArgs),
    /// Overlap, rank-biased overlap and fold stability.
    Compare(RunArgs),
    /// Knowledge-graph domain relevance per category.
    Domains(RunArgs),
    /// Cross-validated classification on each feature set.
    Evaluate(RunArgs),
    /// Collate all artifacts into one markdown summary.
    Report(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Write a synthetic planted-marker workspace with a ready config.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 500)]
        documents: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        // Relative overrides are taken from the working directory, not the
        // config's directory.
        cfg.output_dir = std::env::current_dir().map(|c| c.join(dir)).unwrap_or_else(|_| dir.clone());
    }
    if let Some(seed) = args.seed {
        cfg.folds.seed = seed;
    }
    Ok(cfg)
}

fn run_stages(stage: Option<Stage>, args: &RunArgs) -> Result<(), PipelineError> {
    if args.jobs == Some(0) {
        return Err(PipelineError::Config("--jobs must be at least 1".into()));
    }
    let pipeline = Pipeline::new(load_config(args)?)?;
    let outputs = match stage {
        Some(s) => vec![pipeline.run(s, args.jobs)?],
        None => pipeline.run_all(args.jobs)?,
    };
    for out in &outputs {
        log::info!("{}: wrote {} files to {}", out.stage, out.files.len(), out.dir.display());
    }
    if args.stdout {
        if let Some(last) = outputs.last() {
            let path = last.primary();
            let text = std::fs::read_to_string(&path)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| PipelineError::Data(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

fn synth(output: &Path, documents: usize, seed: u64) -> Result<(), PipelineError> {
    let spec = PlantedSpec { documents, seed, ..Default::default() };
    let paths = write_planted_workspace(output, &spec)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", output.display())))?;
    let rel = |p: &Path| p.strip_prefix(&paths.root).unwrap_or(p).to_path_buf();
    let mut cfg = RunConfig::new(rel(&paths.corpus), rel(&paths.taxonomy));
    cfg.dumps = Some(rel(&paths.dumps));
    cfg.mapping = Some(rel(&paths.mapping));
    cfg.kg.backend = KgBackend::Dump;
    cfg.kg.edges = Some(rel(&paths.edges));
    let cfg_path = paths.root.join("attnsel.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| PipelineError::Data(format!("{}: {e}", cfg_path.display())))?;
    log::info!("wrote synthetic workspace; run `attnsel all --config {}`", cfg_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).target(env_logger::Target::Stderr).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => run_stages(Some(Stage::Ingest), a),
        Command::Attend(a) => run_stages(Some(Stage::Attend), a),
        Command::Select(a) => run_stages(Some(Stage::Select), a),
        Command::Compare(a) => run_stages(Some(Stage::Compare), a),
        Command::Domains(a) => run_stages(Some(Stage::Domains), a),
        Command::Evaluate(a) => run_stages(Some(Stage::Evaluate), a),
        Command::Report(a) => run_stages(Some(Stage::Report), a),
        Command::All(a) => run_stages(None, a),
        Command::Synth { output, documents, seed } => synth(output, *documents, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "code": e.exit_code(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
