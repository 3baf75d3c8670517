use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcmil::cohort::DataPaths;
use pcmil::commands;
use pcmil::config::{parse_alpha, Settings};
use pcmil::error::{CliError, Result};
use pcmil_core::Context;

/// Progressive-context multiple instance learning on patch-embedding grids.
#[derive(Parser)]
#[command(name = "pcmil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Composition vector as `slide,4mm,2mm,1mm` percents.
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Data {
    /// Cohort directory in the layout written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    tissue: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Directory of `<id>.pcm1` embedding files.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Full patch truth, for regional agreement.
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl Data {
    fn paths(&self) -> Result<DataPaths> {
        let mut paths = match &self.data {
            Some(d) => DataPaths::in_dir(d),
            None => {
                let (Some(manifest), Some(embeddings)) = (&self.manifest, &self.embeddings) else {
                    return Err(CliError::Config("give --data or both --manifest and --embeddings".into()));
                };
                DataPaths {
                    manifest: manifest.clone(),
                    tissue: None,
                    annotations: None,
                    embeddings: embeddings.clone(),
                    truth: None,
                }
            }
        };
        if let Some(p) = &self.manifest {
            paths.manifest = p.clone();
        }
        if let Some(p) = &self.embeddings {
            paths.embeddings = p.clone();
        }
        for (slot, given) in [
            (&mut paths.tissue, &self.tissue),
            (&mut paths.annotations, &self.annotations),
            (&mut paths.truth, &self.truth),
        ] {
            if given.is_some() {
                slot.clone_from(given);
            }
        }
        Ok(paths)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort into --out.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Write bags.jsonl for every slide and usable context.
    Bags {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Only this context (slide, 4mm, 2mm or 1mm).
        #[arg(long)]
        context: Option<String>,
    },
    /// Assign contexts to training and validation slides.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Train one model and write checkpoint.pcmw and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Use this assignment instead of allocating.
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test slides at every context.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run one experiment per composition vector and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// File of composition vectors, one per line.
        #[arg(long)]
        alphas: Option<PathBuf>,
        /// Run this many experiments at once.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Write attention and region heatmaps.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Slide to render; repeatable. Defaults to every test slide.
        #[arg(long = "slide")]
        slides: Vec<String>,
    },
}

fn settings(common: &Common) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        s.apply(k, v)?;
    }
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(alpha) = &common.alpha {
        s.alpha = parse_alpha(alpha)?;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => commands::synth(&settings(&common)?, &common.out),
        Command::Bags { common, data, context } => {
            let context = context
                .map(|c| c.parse::<Context>().map_err(|_| CliError::Config(format!("unknown context {c:?}"))))
                .transpose()?;
            commands::bags(&data.paths()?, &settings(&common)?, &common.out, context)
        }
        Command::Allocate { common, data } => commands::allocate(&data.paths()?, &settings(&common)?, &common.out),
        Command::Train { common, data, assignment } => {
            commands::train(&data.paths()?, &settings(&common)?, &common.out, assignment.as_deref())
        }
        Command::Eval { common, data, checkpoint } => {
            commands::eval(&data.paths()?, &settings(&common)?, &checkpoint, &common.out, data.truth.as_deref())
        }
        Command::Sweep { common, data, alphas, parallel } => {
            commands::sweep(&data.paths()?, &settings(&common)?, &common.out, alphas.as_deref(), parallel)
        }
        Command::Heatmap { common, data, checkpoint, slides } => {
            commands::heatmap(&data.paths()?, &settings(&common)?, &checkpoint, &common.out, &slides)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
