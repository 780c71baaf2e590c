//! `aelem`: runs the pipeline one stage per invocation.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::manifest::{Outcome, StageRunner};

#[derive(Debug, Parser)]
#[command(
    name = "aelem",
    version,
    about = "Language-derived appearance elements pipeline"
)]
struct Cli {
    /// JSON pipeline config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set cluster.k=100`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Directory holding every artifact and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Re-run even when inputs and config are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the description corpus.
    GenCorpus,
    /// Embed the corpus.
    Encode,
    /// k-means centroids, dot-product assignments and element labels.
    Cluster,
    /// Train prompts and head; write the elements.
    Tune,
    /// Per-element attribute report.
    Analyze,
    /// Train the toy detector with and without elements.
    TrainToy,
    /// Accuracy against K.
    Sweep,
    /// Finite-difference check of every trainable path; exits 4 on violation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Markdown summary of the artifacts present.
    Report,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs == Some(0) {
        return Err(CliError::Config("--jobs: must be >= 1".into()));
    }
    let cfg = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(CliError::run)?;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::run(format!("{}: {e}", cli.out.display())))?;
    let r = StageRunner {
        out: &cli.out,
        force: cli.force,
    };
    let outcome = match &cli.command {
        Command::GenCorpus => stages::gen_corpus(&r, &cfg)?,
        Command::Encode => stages::encode(&r, &cfg)?,
        Command::Cluster => stages::cluster(&r, &cfg)?,
        Command::Tune => stages::tune(&r, &cfg)?,
        Command::Analyze => stages::analyze(&r, &cfg)?,
        Command::TrainToy => stages::train_toy(&r, &cfg)?,
        Command::Sweep => stages::sweep(&r, &cfg)?,
        Command::Report => stages::report(&r, &cfg)?,
        Command::Gradcheck { seeds } => {
            if *seeds == 0 {
                return Err(CliError::Config("--seeds: must be >= 1".into()));
            }
            let (outcome, passed) = stages::gradcheck(&r, *seeds)?;
            announce(&outcome);
            if !passed {
                return Err(CliError::Check(
                    "gradient check exceeded the tolerance; see gradcheck.json".into(),
                ));
            }
            return Ok(());
        }
    };
    announce(&outcome);
    Ok(())
}

fn announce(outcome: &Outcome) {
    match outcome {
        Outcome::Ran(e) => println!(
            "{}: wrote {} artifacts in {:.2}s",
            e.stage,
            e.outputs.len(),
            e.wall_time_s
        ),
        Outcome::UpToDate(e) => println!("{}: up to date (use --force to re-run)", e.stage),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
