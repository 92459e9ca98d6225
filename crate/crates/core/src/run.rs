//! Config-driven training and ablation runs, as used by the `affectsr` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;

use crate::checkpoint::Archive;
use crate::config::RunConfigFile;
use crate::data::{make_split, read_manifest, SamplePair};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_ablation, AblationSetup, AblationTable, EvalPlugins, EvalReport, Method, MetricSet};
use crate::fer::plugin_from_spec;
use crate::model::Variant;
use crate::training::{checkpoint_model_config, init_params, StepRecord, Trainer};

/// Environment variable naming a directory for decoded-sample caching.
pub const CACHE_ENV: &str = "AFFECTSR_CACHE";

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Train and eval samples per the config's split.
pub fn load_split(cfg: &RunConfigFile) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    let layout = cfg.layout();
    let ids = read_manifest(&layout.manifest)?;
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} lists no samples",
            layout.manifest.display()
        )));
    }
    let (train_ids, eval_ids) = if cfg.data.eval_count == 0 {
        (ids, Vec::new())
    } else {
        make_split(&ids, cfg.data.eval_count, cfg.data.split_seed)?
    };
    let cache = cache_dir();
    let load = |ids: &[String]| -> Result<Vec<SamplePair>> {
        ids.iter()
            .map(|id| layout.load(id, cfg.data.scale, cache.as_deref()))
            .collect()
    };
    Ok((load(&train_ids)?, load(&eval_ids)?))
}

/// Metrics requested by the config; ECM is added by default when a FER plugin is set.
pub fn configured_metrics(cfg: &RunConfigFile) -> Result<MetricSet> {
    match &cfg.metrics.metrics {
        Some(list) => list.parse(),
        None => Ok(MetricSet {
            ecm: cfg.metrics.fer.is_some(),
            ..MetricSet::default()
        }),
    }
}

/// Evaluate `method` with the plugins named in the config.
pub fn evaluate_with(
    method: Method<'_>,
    samples: &[SamplePair],
    metrics: MetricSet,
    fer_spec: Option<&str>,
) -> Result<EvalReport> {
    if metrics.ecm && fer_spec.is_none() {
        return Err(Error::Config(
            "metric `ecm` needs a FER plugin (--plugin toy:<seed> or cmd:<command>)".into(),
        ));
    }
    let mut fer = fer_spec.map(plugin_from_spec).transpose()?;
    evaluate(
        method,
        samples,
        metrics,
        EvalPlugins {
            fer: fer.as_mut().map(|p| p.as_mut() as &mut dyn crate::fer::FerPlugin),
            lpips: None,
        },
    )
}

pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub report: Option<EvalReport>,
}

/// Train per `cfg` (optionally resuming), writing `losses.jsonl`, periodic and
/// final checkpoints, and `eval.jsonl` when an eval split exists.
pub fn train(cfg: &RunConfigFile, resume: Option<&Path>) -> Result<TrainOutcome> {
    let model_cfg = cfg.model_config()?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train_set, eval_set) = load_split(cfg)?;
    let metrics = configured_metrics(cfg)?;

    let mut trainer = match resume {
        Some(path) => {
            let archive = load_checkpoint(path)?;
            let t = Trainer::from_checkpoint(&archive)?;
            if t.model().config() != &model_cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model config",
                    path.display()
                )));
            }
            t
        }
        None => {
            let model = init_params(&model_cfg, cfg.model.pretrained.as_deref(), DType::F32)?;
            Trainer::new(model, cfg.train.clone())?
        }
    };

    let log_path = out.join("losses.jsonl");
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let interval = cfg.train.checkpoint_interval;
    let records = trainer.fit(&train_set, |t, rec| {
        let line = serde_json::to_string(rec).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log::info!("step {} loss {:.6}", rec.step, rec.loss.total);
        if interval > 0 && t.step() % interval == 0 {
            t.checkpoint()?.save(&out.join(format!("step{:06}.ckpt", t.step())))?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let checkpoint = out.join("final.ckpt");
    trainer.checkpoint()?.save(&checkpoint)?;
    let report = if eval_set.is_empty() {
        None
    } else {
        let r = evaluate_with(
            Method::Model(trainer.model()),
            &eval_set,
            metrics,
            cfg.metrics.fer.as_deref(),
        )?;
        r.save(&out.join("eval.jsonl"))?;
        Some(r)
    };
    Ok(TrainOutcome {
        records,
        checkpoint,
        report,
    })
}

/// Read a checkpoint, reporting a missing file as a configuration error.
pub fn load_checkpoint(path: &Path) -> Result<Archive> {
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint not found: {}", path.display())));
    }
    let archive = Archive::load(path)?;
    checkpoint_model_config(&archive)?;
    Ok(archive)
}

/// Parse a comma-separated variant list; empty lists are rejected.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let variants = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Variant>>>()?;
    if variants.is_empty() {
        return Err(Error::Config("variant list is empty".into()));
    }
    Ok(variants)
}

/// Train and evaluate each variant on the config's split. Without an eval split
/// the training samples are evaluated.
pub fn ablate(cfg: &RunConfigFile, variants: &[Variant]) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Config("variant list is empty".into()));
    }
    let fer = cfg
        .metrics
        .fer
        .clone()
        .ok_or_else(|| Error::Config("ablation reports ECM and needs [metrics] fer".into()))?;
    let (train_set, eval_set) = load_split(cfg)?;
    let eval_samples = if eval_set.is_empty() { &train_set } else { &eval_set };
    let setup = AblationSetup {
        dataset: cfg
            .data
            .root
            .file_name()
            .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned()),
        model: cfg.model_config()?,
        train: cfg.train.clone(),
        train_samples: &train_set,
        eval_samples,
    };
    let table = run_ablation(variants, &setup, || plugin_from_spec(&fer))?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("ablation.txt");
    fs::write(&path, table.render()).map_err(|e| Error::io(&path, e))?;
    let path = out.join("ablation.json");
    let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Config(e.to_string()))?;
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{json}").map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
