//! Adam optimization over the composite loss, checkpointing, and pretrained
//! backbone initialization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Archive, ArchiveMeta};
use crate::data::{ImageTensor, LandmarkSet, SamplePair};
use crate::error::{Error, Result};
use crate::losses::{
    embedding_l2, pixel_l1, style_loss, total_loss, train_hist_loss, FeatureExtractor, LossComponents, LossRecord,
    LossWeights, RandomConvExtractor,
};
use crate::model::{AffectSrNet, ModelConfig};
use crate::nn::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Save every this many steps; 0 disables periodic checkpoints.
    pub checkpoint_interval: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-5,
            batch_size: 4,
            max_steps: 1000,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_interval: 0,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_end <= self.lr_start) || self.lr_end < 0.0 {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        self.weights.validate()
    }

    /// Cosine decay from `lr_start` at step 0 to `lr_end` at `max_steps`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if self.max_steps == 0 {
            return self.lr_start;
        }
        let t = step.min(self.max_steps) as f64 / self.max_steps as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (PI * t).cos())
    }
}

/// Adam with bias correction (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One update; returns the gradient norm before clipping. Parameters without
    /// a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore, lr: f64, clip: Option<f64>) -> Result<f64> {
        let mut collected = Vec::with_capacity(params.len());
        let mut sq = 0.0f64;
        for (name, var) in params {
            let g = match grads.get(var) {
                Some(g) => g.detach(),
                None => var.zeros_like()?,
            };
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            collected.push((name, var, g));
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "gradient",
                value: norm,
            });
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var, g) in collected {
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => var.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => var.zeros_like()?,
            };
            let m = ((m_prev * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((v_prev * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(norm)
    }
}

/// Optional detector re-extracting landmarks from super-resolved output.
pub trait LandmarkExtractor {
    fn extract(&mut self, img: &ImageTensor) -> Result<LandmarkSet>;
}

/// Stacked tensors plus landmarks for one optimization step.
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
    /// Landmarks as seen at input resolution (snapped to the LR pixel grid).
    pub lr_landmarks: Vec<LandmarkSet>,
    pub hr_landmarks: Vec<LandmarkSet>,
}

impl Batch {
    pub fn from_samples(samples: &[&SamplePair]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let lr: Vec<ImageTensor> = samples.iter().map(|s| s.lr.clone()).collect();
        let hr: Vec<ImageTensor> = samples.iter().map(|s| s.hr.clone()).collect();
        let lr = ImageTensor::stack(&lr)?.into_tensor();
        let (_, _, h, w) = lr.dims4()?;
        Ok(Self {
            lr,
            hr: ImageTensor::stack(&hr)?.into_tensor(),
            lr_landmarks: samples.iter().map(|s| s.landmarks.quantized(h, w)).collect(),
            hr_landmarks: samples.iter().map(|s| s.landmarks.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossRecord,
    pub grad_norm: f64,
}

pub struct Trainer {
    model: AffectSrNet,
    cfg: TrainConfig,
    opt: Adam,
    extractor: Box<dyn FeatureExtractor>,
    landmark_extractor: Option<Box<dyn LandmarkExtractor>>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    model: ModelConfig,
    train: TrainConfig,
    dtype: String,
}

impl Trainer {
    /// Uses the seeded random-convolution style extractor.
    pub fn new(model: AffectSrNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let extractor = Box::new(RandomConvExtractor::new(cfg.seed)?);
        Ok(Self {
            model,
            cfg,
            opt: Adam::default(),
            extractor,
            landmark_extractor: None,
            step: 0,
        })
    }

    pub fn with_extractor(mut self, extractor: Box<dyn FeatureExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn with_landmark_extractor(mut self, extractor: Box<dyn LandmarkExtractor>) -> Self {
        self.landmark_extractor = Some(extractor);
        self
    }

    pub fn model(&self) -> &AffectSrNet {
        &self.model
    }

    pub fn into_model(self) -> AffectSrNet {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Loss terms for a batch without updating anything.
    pub fn components(&mut self, batch: &Batch, mode: Mode) -> Result<LossComponents> {
        let lr_lmk: Vec<&LandmarkSet> = batch.lr_landmarks.iter().collect();
        let out = self.model.forward(&batch.lr, Some(&lr_lmk), mode)?;
        let hr = batch.hr.to_dtype(self.model.dtype())?;
        let pix = pixel_l1(&out.sr, &hr)?;
        let hist = train_hist_loss(&out.sr, &hr)?;
        let style = style_loss(&out.sr, &hr, self.extractor.as_ref())?;
        let emb = match &out.emb {
            Some(emb_sr) => {
                let hr_lmk: Vec<&LandmarkSet> = batch.hr_landmarks.iter().collect();
                let emb_hr = self.model.encode(&hr_lmk)?.expect("graph variant");
                let emb_sr = match self.landmark_extractor.as_mut() {
                    Some(ex) => {
                        let sr_img = ImageTensor::new(out.sr.detach().to_dtype(DType::F32)?)?;
                        let sets = (0..sr_img.batch())
                            .map(|i| ex.extract(&sr_img.get(i)?))
                            .collect::<Result<Vec<_>>>()?;
                        let refs: Vec<&LandmarkSet> = sets.iter().collect();
                        self.model.encode(&refs)?.expect("graph variant")
                    }
                    None => emb_sr.clone(),
                };
                embedding_l2(emb_sr.tensor(), emb_hr.tensor())?
            }
            None => Tensor::zeros((), self.model.dtype(), hr.device())?,
        };
        Ok(LossComponents { pix, hist, style, emb })
    }

    /// One Adam step on the weighted total loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = self.cfg.learning_rate(self.step);
        let components = self.components(batch, Mode::Train)?;
        let record = components.record(&self.cfg.weights)?;
        let total = total_loss(&components, &self.cfg.weights)?;
        let grads = total.backward()?;
        let params = self.model.params().trainable();
        let grad_norm = self.opt.step(&params, &grads, lr, self.cfg.clip_norm)?;
        let rec = StepRecord {
            step: self.step,
            lr,
            loss: record,
            grad_norm,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Train until `max_steps`, drawing batches from a seeded per-epoch shuffle.
    /// `on_step` sees every record and may save checkpoints.
    pub fn fit(
        &mut self,
        samples: &[SamplePair],
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let mut sampler = BatchSampler::new(samples.len(), self.cfg.batch_size, self.cfg.seed);
        sampler.skip(self.step);
        let mut records = Vec::new();
        while self.step < self.cfg.max_steps {
            let idx = sampler.next_batch();
            let refs: Vec<&SamplePair> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let rec = self.train_step(&batch)?;
            on_step(self, &rec)?;
            records.push(rec);
        }
        Ok(records)
    }

    /// Parameters, buffers, optimizer moments, step and config snapshot.
    pub fn checkpoint(&self) -> Result<Archive> {
        let mut a = Archive::default();
        for (name, entry) in self.model.params().entries() {
            a.insert(format!("param.{name}"), entry.var.as_tensor())?;
        }
        for (name, m) in &self.opt.m {
            a.insert(format!("adam.m.{name}"), m)?;
        }
        for (name, v) in &self.opt.v {
            a.insert(format!("adam.v.{name}"), v)?;
        }
        let snapshot = Snapshot {
            model: self.model.config().clone(),
            train: self.cfg.clone(),
            dtype: format!("{:?}", self.model.dtype()).to_lowercase(),
        };
        a.meta = ArchiveMeta {
            step: self.step,
            config: serde_json::to_string(&snapshot).map_err(|e| Error::Checkpoint(e.to_string()))?,
        };
        Ok(a)
    }

    /// Rebuild a trainer (model, optimizer state, step) from a checkpoint.
    pub fn from_checkpoint(archive: &Archive) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(&archive.meta.config)
            .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
        let dtype = if snap.dtype == "f64" { DType::F64 } else { DType::F32 };
        let model = AffectSrNet::new(snap.model, dtype)?;
        restore_params(&model, archive)?;
        let mut t = Trainer::new(model, snap.train)?;
        for (name, _) in t.model.params().trainable() {
            let (mk, vk) = (format!("adam.m.{name}"), format!("adam.v.{name}"));
            if let (Some(m), Some(v)) = (archive.tensors.get(&mk), archive.tensors.get(&vk)) {
                t.opt.m.insert(name.clone(), m.to_tensor()?);
                t.opt.v.insert(name, v.to_tensor()?);
            }
        }
        t.step = archive.meta.step;
        t.opt.t = archive.meta.step;
        Ok(t)
    }
}

fn restore_params(model: &AffectSrNet, archive: &Archive) -> Result<()> {
    for name in model.params().names() {
        let key = format!("param.{name}");
        let raw = archive
            .tensors
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{key}`")))?;
        model.params().assign(&name, &raw.to_tensor()?)?;
    }
    Ok(())
}

/// Model described by a checkpoint's config snapshot, with its weights loaded.
pub fn load_model(archive: &Archive) -> Result<AffectSrNet> {
    Ok(Trainer::from_checkpoint(archive)?.into_model())
}

/// Model config recorded in a checkpoint.
pub fn checkpoint_model_config(archive: &Archive) -> Result<ModelConfig> {
    let snap: Snapshot = serde_json::from_str(&archive.meta.config)
        .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
    Ok(snap.model)
}

/// Cycles through sample indices in per-epoch seeded permutations.
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            batch,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn skip(&mut self, batches: u64) {
        for _ in 0..batches {
            self.next_batch();
        }
    }
}

/// Seeded model, with backbone weights optionally taken from a converted
/// pretrained archive. Every backbone parameter except the instance-norm
/// affines must be present; the graph and fusion parts stay seeded-random.
pub fn init_params(cfg: &ModelConfig, pretrained: Option<&Path>, dtype: DType) -> Result<AffectSrNet> {
    let model = AffectSrNet::new(cfg.clone(), dtype)?;
    let Some(path) = pretrained else {
        return Ok(model);
    };
    let archive = Archive::load(path)?;
    let wanted: Vec<String> = model
        .params()
        .names()
        .into_iter()
        .filter(|n| n.starts_with("backbone.") && !is_norm_affine(n))
        .collect();
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|n| !archive.tensors.contains_key(n.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "pretrained archive {} is missing: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    for name in &wanted {
        model.params().assign(name, &archive.tensor(name)?)?;
    }
    Ok(model)
}

fn is_norm_affine(name: &str) -> bool {
    name.split('.').any(|part| part.starts_with("norm"))
}

/// Backbone weights (without norm affines) in the pretrained archive layout.
pub fn export_backbone(model: &AffectSrNet) -> Result<Archive> {
    let mut a = Archive::default();
    for (name, var) in model.params().trainable() {
        if name.starts_with("backbone.") && !is_norm_affine(&name) {
            a.insert(name, var.as_tensor())?;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            max_steps: 500,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(500), 1e-5);
        assert!(cfg.learning_rate(250) < 1e-3 && cfg.learning_rate(250) > 1e-5);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_start: 1e-5,
            lr_end: 1e-3,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_covers_epoch() {
        let mut a = BatchSampler::new(10, 4, 3);
        let mut b = BatchSampler::new(10, 4, 3);
        let xa: Vec<Vec<usize>> = (0..6).map(|_| a.next_batch()).collect();
        let xb: Vec<Vec<usize>> = (0..6).map(|_| b.next_batch()).collect();
        assert_eq!(xa, xb);
        let mut first: Vec<usize> = xa.concat()[..10].to_vec();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let mut c = BatchSampler::new(10, 4, 3);
        c.skip(2);
        assert_eq!(c.next_batch(), xa[2]);
    }

    #[test]
    fn norm_affine_names() {
        assert!(is_norm_affine("backbone.rrdb0.rdb1.norm3.gamma"));
        assert!(!is_norm_affine("backbone.rrdb0.rdb1.conv3.weight"));
    }
}
