mod commands;
mod failure;
mod ring;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nerfedit_core::scene_io::ProviderSelection;

use failure::Failure;

/// Reconstruct, edit and render foreground-aware radiance fields.
#[derive(Debug, Parser)]
#[command(name = "nerfedit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a field to the configured dataset; writes field.nefc
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Edit a reconstructed field; writes edited.nefc and edit_log.jsonl
    Edit {
        #[command(flatten)]
        run: RunArgs,
        /// Reconstructed field to edit
        #[arg(long)]
        checkpoint: PathBuf,
        /// oracle:<target.png> or remote:<url>; overrides the config
        #[arg(long)]
        provider: Option<ProviderSelection>,
        /// Continue from the checkpoint left in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Render a turntable of views around the scene
    Render {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        /// Number of views on the ring
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        /// Ring elevation in degrees; defaults to the training cameras' mean
        #[arg(long)]
        elevation: Option<f64>,
        /// Background color for foreground renders, as r,g,b in [0, 1]
        #[arg(long, value_parser = parse_color, default_value = "0,0,0")]
        bg: [f64; 3],
        /// Samples per ray
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Soft-mask sharpness; overrides the config
        #[arg(long)]
        sharpness: Option<f64>,
    },
    /// Print a checkpoint's configuration and parameter counts
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Foreground,
    Background,
    Editprob,
}

fn parse_color(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err("expected three components in [0, 1]".into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NERFEDIT_LOG_LEVEL", "info"))
        .format_timestamp_millis()
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { module, message }) => {
            eprintln!("error [{module}]: {message}");
            ExitCode::from(1)
        }
    }
}
