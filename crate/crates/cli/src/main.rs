//! `mmld` — operator toolchain for the multi-modal latent diffusion
//! pipeline: synthetic data generation, two-stage training (autoencoders,
//! then the score network), sampling, evaluation and ablations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure
//! (NaN/Inf), 4 I/O or file-format error.

mod config;
mod ops;
mod pgm;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use mmld::error::Error;
use mmld::pipeline::TrainMode;
use ops::{SampleArgs, SampleMethod};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mmld",
    version,
    about = "multi-modal latent diffusion toolchain"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "mmld.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Multitime,
    Unidiffuser,
    Unconditional,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Multitime,
    Inpaint,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-modal dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all per-modality autoencoders and fit normalizers.
    TrainAe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the score network on the encoded latents.
    TrainScore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "multitime")]
        mode: ModeArg,
    },
    /// Sample from the trained model; joint when no condition is given.
    Sample {
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        score: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Conditioning data: comma-separated modality=path pairs.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, value_enum, default_value = "multitime")]
        method: MethodArg,
        /// Use the window-resampling schedule.
        #[arg(long)]
        repaint: bool,
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Also rasterize 2-D modalities to PGM scatter plots.
        #[arg(long)]
        pgm: bool,
        /// Also dump latents and decoded modalities as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Coherence, Fréchet distance and the robustness scan.
    Eval {
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        score: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain the score network for each d and tabulate the metrics.
    AblateD {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        /// Comma-separated randomization probabilities.
        #[arg(long)]
        d_list: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_conditions(spec: &str) -> Result<Vec<(String, PathBuf)>, Error> {
    spec.split(',')
        .map(|pair| {
            let (name, path) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("bad condition {pair:?}, want modality=path"))
            })?;
            Ok((name.trim().to_string(), PathBuf::from(path.trim())))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData { out } => ops::cmd_gen_data(&cfg, &out),
        Command::TrainAe { data, out } => ops::cmd_train_ae(&cfg, &data, &out),
        Command::TrainScore {
            data,
            ae,
            out,
            mode,
        } => {
            let mode = match mode {
                ModeArg::Multitime => TrainMode::Multitime,
                ModeArg::Unidiffuser => TrainMode::Unidiffuser,
                ModeArg::Unconditional => TrainMode::Unconditional,
            };
            ops::cmd_train_score(&cfg, &data, &ae, &out, mode)
        }
        Command::Sample {
            ae,
            score,
            out,
            condition,
            method,
            repaint,
            count,
            pgm,
            csv,
        } => {
            let conditions = match condition {
                Some(s) => parse_conditions(&s)?,
                None => Vec::new(),
            };
            let args = SampleArgs {
                count,
                method: match method {
                    MethodArg::Multitime => SampleMethod::Multitime,
                    MethodArg::Inpaint => SampleMethod::Inpaint,
                },
                repaint,
                conditions,
                pgm,
                csv,
                seed_override: None,
            };
            ops::cmd_sample(&cfg, &ae, &score, &out, &args)
        }
        Command::Eval {
            ae,
            score,
            data,
            out,
        } => ops::cmd_eval(&cfg, &ae, &score, &data, &out),
        Command::AblateD {
            data,
            ae,
            d_list,
            out,
        } => {
            let ds: Result<Vec<f64>, Error> = d_list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad d value {s:?}")))
                })
                .collect();
            ops::cmd_ablate_d(&cfg, &data, &ae, &ds?, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Shape { .. } => 2,
                Error::Numeric(_) => 3,
                Error::Io(_) | Error::Format(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}
