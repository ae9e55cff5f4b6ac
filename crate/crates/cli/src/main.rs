mod commands;
mod config;
mod subbands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use waveboost::networks::PipelineMode;
use waveboost::Error;

use config::{Overrides, RunConfig};

/// Wavelet-domain super-resolution: decomposition, training and evaluation.
#[derive(Parser, Debug)]
#[command(name = "waveboost", version)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Pipeline mode: pre_interpolated or progressive.
    #[arg(long, global = true)]
    mode: Option<PipelineMode>,
    /// Upscaling factor, 2 or 4.
    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split an image into LL, LH, HL and HH subband files.
    Decompose {
        input: PathBuf,
        /// Also write exact 32-bit float sidecars.
        #[arg(long)]
        raw: bool,
    },
    /// Rebuild an image from a `decompose` directory.
    Reconstruct { dir: PathBuf },
    /// Super-resolve one low-resolution image.
    Sr {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ground truth; prints PSNR and SSIM when given.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Pretrain the perceptual encoder as an autoencoder.
    PretrainPerceptual,
    /// Train a generator (and critic) from scratch or resume a run.
    Train {
        /// Encoder checkpoint; pretrained on the fly when the variant needs one.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue training a checkpoint on new data with a fresh optimizer.
    Finetune {
        #[arg(long)]
        parent: PathBuf,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// PSNR and SSIM of matching files in two folders.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// JSON lines instead of TSV.
        #[arg(long)]
        jsonl: bool,
    },
    /// Train every configured variant and rho and tabulate quality and cost.
    Report {
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        vgg_encoder: Option<PathBuf>,
    },
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        other => Err(format!("scale must be 2 or 4, got {other}")),
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::VariantTermMismatch { .. } => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_IO,
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path, Error> {
    out.as_deref()
        .ok_or_else(|| Error::InvalidConfig("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<(), Error> {
    let overrides = Overrides {
        seed: cli.seed,
        mode: cli.mode,
        scale: cli.scale,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Decompose { input, raw } => {
            let out = require_out(&cli.out)?;
            let mut extra = waveboost::manifest::Manifest::new();
            extra.nest("metrics", &cfg.ssim().to_manifest());
            for p in subbands::decompose(input, out, *raw, &extra)? {
                println!("{}", p.display());
            }
        }
        Command::Reconstruct { dir } => {
            let out = require_out(&cli.out)?;
            let img = subbands::reconstruct(dir)?;
            waveboost::data::save_image(&img, out)?;
            println!("{}", out.display());
        }
        Command::Sr {
            input,
            checkpoint,
            reference,
        } => {
            let out = require_out(&cli.out)?;
            commands::sr(&cfg, input, checkpoint, out, reference.as_deref(), (cli.mode, cli.scale))?;
        }
        Command::PretrainPerceptual => commands::pretrain(&cfg, require_out(&cli.out)?)?,
        Command::Train { encoder, resume } => {
            commands::train_cmd(&cfg, require_out(&cli.out)?, encoder.as_deref(), resume.as_deref())?
        }
        Command::Finetune { parent, encoder } => {
            commands::finetune_cmd(&cfg, require_out(&cli.out)?, parent, encoder.as_deref())?
        }
        Command::Eval { sr, hr, jsonl } => commands::eval(&cfg, sr, hr, *jsonl, cli.out.as_deref())?,
        Command::Report { encoder, vgg_encoder } => {
            commands::report(&cfg, require_out(&cli.out)?, encoder.as_deref(), vgg_encoder.as_deref())?
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged {
                last_checkpoint: Some(p),
                ..
            } = &e
            {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
