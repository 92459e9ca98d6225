use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use affectsr::config::RunConfigFile;
use affectsr::data::{bicubic_resize, DatasetLayout, ImageTensor, LandmarkSet, HR_SIZE};
use affectsr::eval::{Method, MetricSet};
use affectsr::fer::{plugin_from_spec, serve};
use affectsr::model::Variant;
use affectsr::run::{self, cache_dir, load_checkpoint};
use affectsr::training::load_model;
use affectsr::{Error, Result};

#[derive(Parser)]
#[command(name = "affectsr", version, about = "Emotion-aware face super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-sample and aggregate metrics as JSON Lines.
    Eval {
        #[arg(long, required_unless_present = "method")]
        ckpt: Option<PathBuf>,
        /// Dataset root holding images/, landmarks/ and manifest.txt.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "psnr,ssim")]
        metrics: String,
        /// FER plugin, `toy:<seed>` or `cmd:<command>`.
        #[arg(long)]
        plugin: Option<String>,
        #[arg(long, default_value_t = 8)]
        scale: usize,
        /// Evaluate plain bicubic upsampling instead of a checkpoint.
        #[arg(long, value_parser = ["bicubic"])]
        method: Option<String>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one LR image and write a 128x128 PNG.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate each variant; print the comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of rrdb,rrdb_in,full.
        #[arg(long, default_value = "rrdb,rrdb_in,full")]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer FER requests over stdin/stdout (reference subprocess plugin).
    #[command(hide = true)]
    FerServe {
        #[arg(long, default_value = "toy:0")]
        plugin: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnsupportedScale(_) | Error::Checkpoint(_) | Error::MissingParam(_) => 1,
        _ => 2,
    }
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfigFile> {
    let mut cfg = RunConfigFile::load(path)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
        cfg.model.seed = seed;
    }
    if let Some(out) = out {
        cfg.output.dir = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            ckpt,
            seed,
            variant,
            scale,
            out,
        } => {
            let mut cfg = load_config(&config, seed, out)?;
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            if let Some(s) = scale {
                cfg.data.scale = s;
            }
            cfg.validate()?;
            let outcome = run::train(&cfg, ckpt.as_deref())?;
            if let Some(last) = outcome.records.last() {
                println!("step {} loss {:.6}", last.step + 1, last.loss.total);
            }
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Eval {
            ckpt,
            data,
            metrics,
            plugin,
            scale,
            method,
            out,
        } => {
            let metrics: MetricSet = metrics.parse()?;
            if metrics.ecm && plugin.is_none() {
                return Err(Error::Config(
                    "metric `ecm` needs a FER plugin: pass --plugin toy:<seed> or cmd:<command>".into(),
                ));
            }
            let model = match (&method, &ckpt) {
                (Some(_), _) => None,
                (None, Some(path)) => Some(load_model(&load_checkpoint(path)?)?),
                (None, None) => return Err(Error::Config("eval needs --ckpt or --method bicubic".into())),
            };
            if let Some(m) = &model {
                if m.config().scale != scale {
                    return Err(Error::Config(format!(
                        "checkpoint is for x{} but --scale is {scale}",
                        m.config().scale
                    )));
                }
            }
            let layout = DatasetLayout::under(&data);
            let ids = affectsr::data::read_manifest(&layout.manifest).map_err(|e| Error::Config(e.to_string()))?;
            let cache = cache_dir();
            let samples = ids
                .iter()
                .map(|id| layout.load(id, scale, cache.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let method = match &model {
                Some(m) => Method::Model(m),
                None => Method::Bicubic,
            };
            let report = run::evaluate_with(method, &samples, metrics, plugin.as_deref())?;
            match out {
                Some(path) => report.save(&path)?,
                None => report.write(io::stdout().lock())?,
            }
        }
        Command::Infer {
            ckpt,
            input,
            landmarks,
            scale,
            out,
        } => {
            affectsr::data::check_scale(scale)?;
            let model = load_model(&load_checkpoint(&ckpt)?)?;
            if model.config().scale != scale {
                return Err(Error::Config(format!(
                    "checkpoint is for x{} but --scale is {scale}",
                    model.config().scale
                )));
            }
            let img = ImageTensor::load(&input)?;
            let side = HR_SIZE / scale;
            let (_, _, h, w) = img.dims();
            let img = match (h, w) {
                (h, w) if h == side && w == side => img,
                (h, w) if h == w && h > side => bicubic_resize(&img, side, side)?,
                _ => {
                    return Err(Error::Config(format!(
                        "x{scale} input must be {side}x{side} (square inputs of at least that size are resized), got {w}x{h}"
                    )))
                }
            };
            let lmk = LandmarkSet::load(&landmarks)?.quantized(side, side);
            let sr = model.super_resolve(&img, Some(&[&lmk]))?;
            sr.save_png(&out)?;
        }
        Command::Ablate {
            config,
            variant,
            seed,
            out,
        } => {
            let variants = run::parse_variants(&variant)?;
            let cfg = load_config(&config, seed, out)?;
            let table = run::ablate(&cfg, &variants)?;
            print!("{}", table.render());
        }
        Command::FerServe { plugin } => {
            let mut p = plugin_from_spec(&plugin)?;
            serve(p.as_mut(), io::stdin().lock(), io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
