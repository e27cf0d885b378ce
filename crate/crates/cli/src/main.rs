use std::path::PathBuf;
use std::process::ExitCode;

use cardioseg::metrics::MetricsReport;
use cardioseg::{Error, Result};
use cardioseg_cli::pipeline::{REPORT_FILE, REPORT_JSON};
use cardioseg_cli::{Outcome, Pipeline, PipelineConfig, Stage};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cardioseg", version, about = "Style-normalised tri-planar cardiac MR segmentation")]
struct Cli {
    /// TOML configuration; built-in defaults are used without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write histograms, loss traces and per-map votes.
    #[arg(long, global = true)]
    diagnostics: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic two-domain phantoms.
    Phantom(StageArgs),
    /// Copy and check the input volumes.
    Ingest(StageArgs),
    /// Cluster samples by intensity distribution and pick the style library.
    Analyze(StageArgs),
    /// Train the joint model and its per-plane fine-tuned copies.
    Train(StageArgs),
    /// Restyle the test slices towards the library.
    Transfer(StageArgs),
    /// Multi-scale per-plane scores for original and restyled volumes.
    Predict(StageArgs),
    /// Adjust, fuse and vote.
    Ensemble(StageArgs),
    /// Score every variant against the ground truth.
    Evaluate(StageArgs),
    /// Every stage in order, skipping those already up to date.
    RunAll(StageArgs),
    /// Print the evaluation report.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Rerun even when outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(output) = cli.output {
        cfg.output = output;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    }

    let stage = |s: Stage, args: StageArgs| (Some(s), args.force);
    let (target, force) = match cli.command {
        Command::Phantom(a) => stage(Stage::Phantom, a),
        Command::Ingest(a) => stage(Stage::Ingest, a),
        Command::Analyze(a) => stage(Stage::Analyze, a),
        Command::Train(a) => stage(Stage::Train, a),
        Command::Transfer(a) => stage(Stage::Transfer, a),
        Command::Predict(a) => stage(Stage::Predict, a),
        Command::Ensemble(a) => stage(Stage::Ensemble, a),
        Command::Evaluate(a) => stage(Stage::Evaluate, a),
        Command::RunAll(a) => (None, a.force),
        Command::Report { format } => return report(&cfg, format),
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            println!("# sha256 {}", cfg.hash());
            return Ok(());
        }
    };

    let pipeline = Pipeline::new(cfg, cli.diagnostics)?;
    eprintln!("config sha256 {}", pipeline.config_hash());
    let outcomes = match target {
        Some(s) => vec![(s, pipeline.run(s, force)?)],
        None => pipeline.run_all(force)?,
    };
    for (s, o) in outcomes {
        let what = match o {
            Outcome::Ran => "done",
            Outcome::UpToDate => "up to date",
        };
        println!("{s}\t{what}");
    }
    Ok(())
}

fn report(cfg: &PipelineConfig, format: Format) -> Result<()> {
    let dir = cfg.output.join(Stage::Evaluate.as_str());
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
            path,
            reason: "no evaluation report".into(),
            command: "cardioseg evaluate".into(),
        })
    };
    match format {
        Format::Tsv => print!("{}", read(REPORT_FILE)?),
        Format::Csv => print!("{}", read(REPORT_FILE)?.replace('\t', ",")),
        Format::Json => {
            let report: MetricsReport = serde_json::from_str(&read(REPORT_JSON)?)
                .map_err(|e| Error::validation(format!("{}: {e}", dir.join(REPORT_JSON).display())))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
        }
    }
    Ok(())
}
