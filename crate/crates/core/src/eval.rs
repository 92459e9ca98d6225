//! Evaluation reports and the component ablation.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{bicubic_resize, ImageTensor, SamplePair, HR_SIZE};
use crate::error::{Error, Result};
use crate::fer::{classify, FerPlugin};
use crate::metrics::{ecm_from_confidences, lpips, psnr, ssim, EcmReport, LpipsPlugin};
use crate::model::{AffectSrNet, ModelConfig, Variant};
use crate::training::{TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub psnr: bool,
    pub ssim: bool,
    pub lpips: bool,
    pub ecm: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            psnr: true,
            ssim: true,
            lpips: false,
            ecm: true,
        }
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    /// Comma-separated subset of `psnr,ssim,lpips,ecm`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = MetricSet {
            psnr: false,
            ssim: false,
            lpips: false,
            ecm: false,
        };
        for name in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match name {
                "psnr" => m.psnr = true,
                "ssim" => m.ssim = true,
                "lpips" => m.lpips = true,
                "ecm" => m.ecm = true,
                other => return Err(Error::Config(format!("unknown metric `{other}`"))),
            }
        }
        Ok(m)
    }
}

/// What produces the super-resolved image.
#[derive(Clone, Copy)]
pub enum Method<'a> {
    Bicubic,
    Model(&'a AffectSrNet),
}

impl Method<'_> {
    pub fn super_resolve(&self, sample: &SamplePair) -> Result<ImageTensor> {
        match self {
            Method::Bicubic => bicubic_resize(&sample.lr, HR_SIZE, HR_SIZE),
            Method::Model(model) => {
                let lmk = sample.landmarks.quantized(sample.lr.height(), sample.lr.width());
                model.super_resolve(&sample.lr, Some(&[&lmk]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub num_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ecm: Option<EcmReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Serialize)]
struct AggregateLine<'a> {
    aggregate: &'a Aggregate,
}

impl EvalReport {
    /// JSON Lines: one object per sample, then `{"aggregate": {...}}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("plain struct serializes"));
            out.push('\n');
        }
        let agg = AggregateLine {
            aggregate: &self.aggregate,
        };
        out.push_str(&serde_json::to_string(&agg).expect("plain struct serializes"));
        out.push('\n');
        out
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(Path::new("<report>"), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in v.flatten() {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Plugins used by [`evaluate`]; ECM needs `fer`.
#[derive(Default)]
pub struct EvalPlugins<'a> {
    pub fer: Option<&'a mut dyn FerPlugin>,
    pub lpips: Option<&'a mut dyn LpipsPlugin>,
}

pub fn evaluate(
    method: Method<'_>,
    samples: &[SamplePair],
    metrics: MetricSet,
    plugins: EvalPlugins<'_>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("no evaluation samples".into()));
    }
    let EvalPlugins {
        mut fer,
        lpips: mut lpips_plugin,
    } = plugins;
    if metrics.ecm && fer.is_none() {
        return Err(Error::Config("ECM requested but no FER plugin configured".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    let (mut conf_o, mut conf_s) = (Vec::new(), Vec::new());
    for sample in samples {
        let sr = method.super_resolve(sample)?;
        let hr = &sample.hr;
        let mut row = SampleMetrics {
            id: sample.id.clone(),
            psnr: None,
            ssim: None,
            lpips: None,
        };
        if metrics.psnr {
            row.psnr = Some(psnr(hr, &sr)?);
        }
        if metrics.ssim {
            row.ssim = Some(ssim(hr, &sr)?);
        }
        if metrics.lpips {
            row.lpips = lpips(hr, &sr, lpips_plugin.as_deref_mut());
        }
        if metrics.ecm {
            let plugin = fer.as_deref_mut().expect("checked above");
            conf_o.push(classify(hr, plugin, &sample.id)?);
            conf_s.push(classify(&sr, plugin, &sample.id)?);
        }
        rows.push(row);
    }
    let ecm = if metrics.ecm {
        Some(ecm_from_confidences(&conf_o, &conf_s)?)
    } else {
        None
    };
    let aggregate = Aggregate {
        num_samples: rows.len(),
        psnr: mean(rows.iter().map(|r| r.psnr)),
        ssim: mean(rows.iter().map(|r| r.ssim)),
        lpips: mean(rows.iter().map(|r| r.lpips)),
        ecm,
    };
    Ok(EvalReport {
        samples: rows,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub psnr: f64,
    pub ssim: f64,
    pub ecm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text table with one row per variant.
    pub fn render(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.variant.label().chars().count())
            .chain(["Component".len()])
            .max()
            .unwrap_or(9);
        let mut s = String::new();
        let _ = writeln!(s, "{:<w$} | {:^31}", "", self.dataset);
        let _ = writeln!(
            s,
            "{:<w$} | {:>9} | {:>7} | {:>9}",
            "Component", "PSNR↑", "SSIM↑", "ECM↓"
        );
        let _ = writeln!(s, "{}", "-".repeat(w + 34));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$} | {:>9.3} | {:>7.4} | {:>9.4}",
                r.variant.label(),
                r.psnr,
                r.ssim,
                r.ecm
            );
        }
        s
    }
}

pub struct AblationSetup<'a> {
    pub dataset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_samples: &'a [SamplePair],
    pub eval_samples: &'a [SamplePair],
}

/// Train each variant from the same seed on the same split and evaluate it.
/// `make_fer` builds a fresh classifier per variant so state cannot leak.
pub fn run_ablation(
    variants: &[Variant],
    setup: &AblationSetup<'_>,
    mut make_fer: impl FnMut() -> Result<Box<dyn FerPlugin>>,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = ModelConfig {
            variant,
            ..setup.model.clone()
        };
        let model = AffectSrNet::new(cfg, candle_core::DType::F32)?;
        let mut trainer = Trainer::new(model, setup.train.clone())?;
        trainer.fit(setup.train_samples, |_, rec| {
            log::debug!("{variant} step {} loss {:.5}", rec.step, rec.loss.total);
            Ok(())
        })?;
        let model = trainer.into_model();
        let mut fer = make_fer()?;
        let report = evaluate(
            Method::Model(&model),
            setup.eval_samples,
            MetricSet::default(),
            EvalPlugins {
                fer: Some(fer.as_mut()),
                lpips: None,
            },
        )?;
        let agg = report.aggregate;
        rows.push(AblationRow {
            variant,
            psnr: agg.psnr.unwrap_or(f64::NAN),
            ssim: agg.ssim.unwrap_or(f64::NAN),
            ecm: agg.ecm.map_or(f64::NAN, |e| e.ecm),
        });
    }
    Ok(AblationTable {
        dataset: setup.dataset.clone(),
        rows,
    })
}
