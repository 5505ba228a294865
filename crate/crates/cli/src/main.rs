use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use vqcollapse_cli::commands::{
    advise_cmd, latent_spectrum, load_spectrum, parse_series, predict_cmd, spectrum_cmd, waterfill, SpectrumInput,
};
use vqcollapse_cli::config::read_text;
use vqcollapse_cli::run::{plan_config, run_config};
use vqcollapse_cli::{CliError, EXIT_PARSE};

#[derive(Parser)]
#[command(name = "vqcollapse", version, about = "Simulate and predict dimensional collapse in vector-quantized autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Worker threads (0 = available parallelism); overrides the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Validate the config and list its cells without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Predict surviving latent dimensions at a given rate.
    #[command(group(ArgGroup::new("input").required(true).args(["spectrum", "dim"])))]
    Predict {
        /// Spectrum file: comma- or newline-separated variances.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// Synthetic spectrum `j^{-exponent}` of this dimension.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 1.0, requires = "dim")]
        exponent: f64,
        /// Rate in bits (`log2 K` for a codebook of size K).
        #[arg(long)]
        rate: f64,
        /// Warm-up initial weight; with `--t-wu` switches to the warm-up bound.
        #[arg(long, requires = "t_wu")]
        epsilon: Option<f64>,
        /// Warm-up duration; `inf` is accepted.
        #[arg(long, requires = "epsilon")]
        t_wu: Option<f64>,
    },
    /// Recommend when to switch from warm-up to quantized training.
    Advise {
        /// CSV with time in column 0.
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        patience: usize,
        #[arg(long)]
        tol: f64,
        /// Value column, by header name or zero-based index.
        #[arg(long, default_value = "1")]
        column: String,
    },
    /// Reverse water-filling table for a spectrum.
    Waterfill {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        rate: f64,
    },
    /// Water-filling analysis of measured latent samples.
    Spectrum {
        /// Latent samples, one per row, optional `# dims= samples=` header.
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        rate: f64,
    },
}

fn execute(cmd: Command) -> Result<i32, CliError> {
    let text = match cmd {
        Command::Run { config, dry_run: true, .. } => plan_config(&config)?.join("\n") + "\n",
        Command::Run { config, workers, dry_run: false } => {
            let report = run_config(&config, workers)?;
            for c in &report.cells {
                if let Some(d) = &c.detail {
                    eprintln!("{}: {} ({d})", c.name, c.status);
                }
            }
            println!("{}", report.manifest.display());
            return Ok(report.exit_code());
        }
        Command::Predict { spectrum, dim, exponent, rate, epsilon, t_wu } => {
            let input = match (&spectrum, dim) {
                (Some(p), _) => SpectrumInput::File(p),
                (None, Some(dim)) => SpectrumInput::PowerLaw { dim, exponent },
                (None, None) => unreachable!("clap requires one input"),
            };
            predict_cmd(&input.load()?, rate, epsilon.zip(t_wu))?
        }
        Command::Advise { series, patience, tol, column } => {
            advise_cmd(&parse_series(&read_text(&series)?, &column)?, patience, tol)?
        }
        Command::Waterfill { spectrum, rate } => waterfill(&load_spectrum(&spectrum)?, rate)?,
        Command::Spectrum { latents, rate } => spectrum_cmd(&latent_spectrum(&latents)?, rate)?,
    };
    print!("{text}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_PARSE as u8 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
