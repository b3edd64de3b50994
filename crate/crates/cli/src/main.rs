//! `mdd`: simulate echoes, build datasets, train, evaluate, infer, report.
//!
//! Exit codes: 0 ok, 2 configuration, 3 data, 4 invariant violation. On
//! failure a single JSON line `{"error": {...}}` goes to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdd_core::{Error, ErrorCategory};

#[derive(Debug, Parser)]
#[command(name = "mdd", version, about = "Micro-deformation displacement estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise one echo cube.
    Simulate {
        /// JSON with `isac`, `scene` and `seed`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a labelled dataset with train/val/test splits.
    GenDataset {
        /// JSON dataset spec, merged over the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Base preset: full, full-no-val or desk.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON with `train`, `model` and `init_seed`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the checkpoint and logs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Loss variant: full, no_lr, no_lf or no_ld.
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint and baselines on a dataset split and the clutter scenario.
    Eval {
        /// Checkpoint file or training output directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated: sp, oracle.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
        /// JSON with `split`, `baselines`, `scenario`, `grids`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// Skip the clutter scenario.
        #[arg(long)]
        no_scenario: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate bias and frequency from a wrapped-phase CSV.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// One column (phase) or two (time_s, phase), radians.
        #[arg(long)]
        input: PathBuf,
        /// Frame rate when the CSV has no time column.
        #[arg(long, default_value_t = 1000.0)]
        frame_rate: f64,
        /// Optional directory for the reconstruction and a manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Pivot evaluation metrics into tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Invariant => 4,
    }
}

fn category_name(category: ErrorCategory) -> &'static str {
    match category {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Invariant => "invariant",
    }
}

fn init_threads(common: &Common) -> Result<(), Error> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    use commands::*;
    match cli.command {
        Command::Simulate { config, out, common } => {
            init_threads(&common)?;
            simulate(config.as_deref(), &out, &common)
        }
        Command::GenDataset { spec, preset, samples, out, common } => {
            init_threads(&common)?;
            gen_dataset(spec.as_deref(), &preset, samples, &out, &common)
        }
        Command::Train { dataset, config, out, epochs, learning_rate, variant, common } => {
            init_threads(&common)?;
            let flags = TrainFlags { epochs, learning_rate, variant };
            train(&dataset, config.as_deref(), &out, &flags, &common)
        }
        Command::Eval { ckpt, dataset, baselines, config, split, no_scenario, out, common } => {
            init_threads(&common)?;
            let flags = EvalFlags { baselines, split, no_scenario };
            eval(&ckpt, &dataset, config.as_deref(), &flags, &out, &common)
        }
        Command::Infer { ckpt, input, frame_rate, out, common } => {
            init_threads(&common)?;
            infer(&ckpt, &input, frame_rate, out.as_deref(), &common)
        }
        Command::Report { input, out, common } => {
            init_threads(&common)?;
            report(&input, &out, &common)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let code = exit_code(category);
            let line = serde_json::json!({
                "error": { "category": category_name(category), "code": code, "message": e.to_string() }
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
