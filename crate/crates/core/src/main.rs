use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stenoseg::cli::{self, Split};
use stenoseg::Result;

#[derive(Parser)]
#[command(name = "stenoseg", version, about = "Stenosis segmentation with state-space and windowed-attention U-Nets")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare annotated images into a sample cache.
    Ingest {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Cache directory; defaults to $STENOSEG_CACHE.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = stenoseg::data::DEFAULT_SIZE)]
        size: usize,
    },
    /// Train every configured fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split of a sample cache.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cache directory or manifest; defaults to the checkpoint's config, then $STENOSEG_CACHE.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the predicted mask of one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional foreground-probability map.
        #[arg(long)]
        probs: Option<PathBuf>,
    },
    /// Merge metric CSVs and draw the bubble chart.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic annotated dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Ingest { annotations, images, out, size } => {
            let m = cli::cmd_ingest(&annotations, &images, out.as_deref(), size)?;
            println!("cached {} samples at {}x{}", m.entries.len(), m.size, m.size);
        }
        Command::Train { config, resume, seed, out } => {
            let cfg = cli::resolve_config(&config, seed, out.as_deref())?;
            for f in cli::cmd_train(&cfg, resume)? {
                let best = f.best_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
                println!("fold {}: {} steps, best F1 {best}, {}", f.fold, f.steps, f.dir.display());
            }
        }
        Command::Eval { checkpoint, manifest, split, out } => {
            let split: Split = split.parse()?;
            let r = cli::cmd_eval(&checkpoint, manifest.as_deref(), split, &out)?;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into());
            println!(
                "{}: precision {} recall {} f1 {} over {} images",
                r.model,
                fmt(r.metrics.precision),
                fmt(r.metrics.recall),
                fmt(r.metrics.f1),
                r.per_image.len()
            );
        }
        Command::Predict { checkpoint, image, out, probs } => {
            let m = cli::cmd_predict(&checkpoint, &image, &out, probs.as_deref())?;
            println!("{} foreground pixels written to {}", m.count_ones(), out.display());
        }
        Command::Report { inputs, out } => {
            let rows = cli::cmd_report(&inputs, &out)?;
            println!("merged {} rows into {}", rows.len(), out.display());
        }
        Command::Synth { out, count, size, seed } => {
            let set = cli::cmd_synth(&out, count, size, seed)?;
            println!("wrote {} images to {}", set.images.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}
