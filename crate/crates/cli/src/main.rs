//! `adaptseg`: dataset generation, training, evaluation, inference and
//! gradient checks for the adversarial adaptation parser.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure or failed check, 3 I/O failure.

mod commands;
mod config;
mod error;
mod fsutil;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "adaptseg",
    version,
    about = "Adversarial cross-domain adaptation for pixel-wise segmentation",
    after_help = "Any configuration key can be overridden with `--key value` (dashes or underscores)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Configuration file of `key = value` lines under `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the labeled source set and the target train and test splits.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Replace existing dataset directories.
        #[arg(long)]
        force: bool,
    },
    /// Train in the configured mode, evaluating on the target test split.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue from a checkpoint of the same run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Reuse a non-empty run directory.
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint, or precomputed label maps, on a labeled dataset.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory whose label maps are the predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Directory for `report.json` and `report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the label map of one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `3 × H × W` f32 tensor file.
        #[arg(long)]
        image: PathBuf,
        /// Output `H × W` u8 tensor file.
        #[arg(long)]
        out: PathBuf,
        /// Color-coded PPM rendering of the prediction.
        #[arg(long)]
        vis: Option<PathBuf>,
        /// Fail unless only `E` and `L` took part in the forward pass.
        #[arg(long)]
        assert_purity: bool,
    },
    /// Finite-difference gradient check of all five networks at desk scale.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        /// Scale analytic gradients by this factor, to see the check fail.
        #[arg(long)]
        inject_fault: Option<f64>,
        /// Also run this many random configurations of every primitive.
        #[arg(long, default_value_t = 0)]
        primitives: usize,
    },
}

fn resolve(arg: &ConfigArg, overrides: &[(String, String)]) -> CliResult<ExperimentConfig> {
    let env_seed = std::env::var(config::SEED_ENV).ok();
    Ok(ExperimentConfig::resolve(arg.config.as_deref(), env_seed, overrides)?)
}

fn run(args: Vec<String>) -> CliResult<()> {
    let (args, overrides) = config::extract_overrides(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.render().to_string();
            return Err(CliError::Usage(text.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let needs_config =
        matches!(cli.command, Command::GenData { .. } | Command::Train { .. } | Command::Gradcheck { .. });
    if !needs_config && !overrides.is_empty() {
        return Err(CliError::Usage(format!(
            "configuration flags such as --{} do not apply to this command",
            overrides[0].0
        )));
    }
    match cli.command {
        Command::GenData { config, force } => commands::gen_data(&resolve(&config, &overrides)?, force),
        Command::Train { config, resume, force } => {
            commands::train(&resolve(&config, &overrides)?, resume.as_deref(), force)
        }
        Command::Eval { checkpoint, predictions, data, out } => {
            commands::eval(checkpoint.as_deref(), predictions.as_deref(), &data, out.as_deref())
        }
        Command::Infer { checkpoint, image, out, vis, assert_purity } => {
            commands::infer(&checkpoint, &image, &out, vis.as_deref(), assert_purity)
        }
        Command::Gradcheck { config, inject_fault, primitives } => {
            commands::gradcheck(&resolve(&config, &overrides)?, inject_fault, primitives)
        }
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
