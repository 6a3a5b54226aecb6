use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stein_cli::runner::{eval_samples, plot_samples, run_experiment, sample_checkpoint};
use stein_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "stein", version, about = "Neural samplers trained by Stein discrepancies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Continue from checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Draw samples from a trained generator checkpoint.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a samples file with the metrics of a config.
    Eval { samples: PathBuf, config: PathBuf },
    /// Render a 2-D samples file as an SVG scatter plot.
    Plot {
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Axis limits as xmin,xmax,ymin,ymax.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        limits: Option<Vec<f64>>,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, resume } => {
            let summary = run_experiment(&config, resume)?;
            println!("wrote {}", summary.output_dir.display());
        }
        Command::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => sample_checkpoint(&checkpoint, count, seed, &out)?,
        Command::Eval { samples, config } => print!("{}", eval_samples(&samples, &config)?),
        Command::Plot { samples, out, limits } => {
            let limits = match limits.as_deref() {
                None => None,
                Some(&[a, b, c, d]) => Some([a, b, c, d]),
                Some(_) => return Err(CliError::Config("--limits: expected xmin,xmax,ymin,ymax".into())),
            };
            plot_samples(&samples, &out, limits)?
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
