//! Training objectives: pixel L1, soft intensity histogram, Gram-matrix style,
//! node-embedding L2, and their weighted total.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, WithDType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::rng_for;

/// Number of triangular bins of the soft intensity histogram.
pub const HIST_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 20.0,
            k3: 50.0,
            k4: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.k1, self.k2, self.k3, self.k4]
            .iter()
            .any(|k| !(k.is_finite() && *k >= 0.0))
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute difference over batch and elements.
pub fn pixel_l1(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    same_shape(sr, hr, "pixel_l1")?;
    Ok((sr - hr)?.abs()?.mean_all()?)
}

/// `(b, c, c)` second-moment matrices normalized by `c * h * w`.
pub fn gram(features: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let f = features.reshape((b, c, h * w))?;
    let g = f.matmul(&f.transpose(1, 2)?.contiguous()?)?;
    Ok((g / (c * h * w) as f64)?)
}

/// Source of intermediate activations for the style loss.
pub trait FeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Uses the image itself as the single feature layer.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

/// Fixed two-layer random convolution stack (3 -> 8 -> 16 channels, ReLU,
/// the second layer at stride 2). Frozen, so no pretrained weights are needed.
pub struct RandomConvExtractor {
    w1: Tensor,
    w2: Tensor,
}

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Result<Self> {
        let make = |name: &str, shape: (usize, usize, usize, usize)| -> Result<Tensor> {
            use rand::Rng;
            let mut rng = rng_for(seed, name);
            let fan_in = (shape.1 * shape.2 * shape.3) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let n = shape.0 * shape.1 * shape.2 * shape.3;
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
        };
        Ok(Self {
            w1: make("style.conv1", (8, 3, 3, 3))?,
            w2: make("style.conv2", (16, 8, 3, 3))?,
        })
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let dt = x.dtype();
        let f1 = x.conv2d(&self.w1.to_dtype(dt)?, 1, 1, 1, 1)?.relu()?;
        let f2 = f1.conv2d(&self.w2.to_dtype(dt)?, 1, 2, 1, 1)?.relu()?;
        Ok(vec![f1, f2])
    }
}

/// Sum over layers of the squared Frobenius norm of the Gram difference, batch mean.
pub fn style_loss(sr: &Tensor, hr: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(sr, hr, "style_loss")?;
    let fs = extractor.features(sr)?;
    let fh = extractor.features(hr)?;
    if fs.is_empty() || fs.len() != fh.len() {
        return Err(Error::Shape("feature extractor returned no layers".into()));
    }
    let b = sr.dim(0)? as f64;
    let mut total: Option<Tensor> = None;
    for (a, h) in fs.iter().zip(&fh) {
        let d = (gram(a)? - gram(h)?)?.sqr()?.sum_all()?;
        total = Some(match total {
            None => d,
            Some(t) => (t + d)?,
        });
    }
    Ok((total.expect("at least one layer") / b)?)
}

/// `sum_v ||z1_v - z2_v||^2`, averaged over the batch.
pub fn embedding_l2(emb_a: &Tensor, emb_b: &Tensor) -> Result<Tensor> {
    same_shape(emb_a, emb_b, "embedding_l2")?;
    let b = emb_a.dim(0)? as f64;
    Ok(((emb_a - emb_b)?.sqr()?.sum_all()? / b)?)
}

/// Per-channel bin frequencies `(b, c, HIST_BINS)` under triangular kernels
/// centred at `k / (HIST_BINS - 1)`. Values are clamped to `[0, 1]` first.
pub fn soft_histogram(x: &Tensor) -> Result<Tensor> {
    x.dims4()?;
    Ok(x.contiguous()?.apply_op1(SoftHistogram)?)
}

/// Fused triangular-kernel histogram over the spatial axes of `(b, c, h, w)`.
/// Each clamped value splits its unit mass between its two nearest bin centers.
struct SoftHistogram;

/// Lower bin index and the weight of the upper bin for a value in `[0, 1]`.
fn hist_split(v: f64) -> (usize, f64) {
    let t = v.clamp(0.0, 1.0) * (HIST_BINS - 1) as f64;
    let k = (t.floor() as usize).min(HIST_BINS - 2);
    (k, t - k as f64)
}

impl SoftHistogram {
    fn fill<T: WithDType>(src: &[T], rows: usize, hw: usize) -> Vec<T> {
        let mut out = vec![0f64; rows * HIST_BINS];
        for r in 0..rows {
            let bins = &mut out[r * HIST_BINS..(r + 1) * HIST_BINS];
            for v in &src[r * hw..(r + 1) * hw] {
                let (k, f) = hist_split(v.to_f64());
                bins[k] += 1.0 - f;
                bins[k + 1] += f;
            }
            bins.iter_mut().for_each(|b| *b /= hw as f64);
        }
        out.into_iter().map(T::from_f64).collect()
    }
}

impl CustomOp1 for SoftHistogram {
    fn name(&self) -> &'static str {
        "soft-histogram"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = layout.shape().dims4()?;
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("soft-histogram needs contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(Self::fill(&v[start..end], b * c, h * w)),
            CpuStorage::F64(v) => CpuStorage::F64(Self::fill(&v[start..end], b * c, h * w)),
            _ => candle_core::bail!("soft-histogram supports f32 and f64 only"),
        };
        Ok((out, Shape::from((b, c, HIST_BINS))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, c, h, w) = arg.dims4()?;
        let hw = h * w;
        let x = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let g = grad_res.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let slope = (HIST_BINS - 1) as f64 / hw as f64;
        let grad: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if !(0.0..=1.0).contains(&v) {
                    return 0.0;
                }
                let row = &g[(i / hw) * HIST_BINS..];
                let (k, _) = hist_split(v);
                (row[k + 1] - row[k]) * slope
            })
            .collect();
        Ok(Some(
            Tensor::from_vec(grad, (b, c, h, w), arg.device())?.to_dtype(arg.dtype())?,
        ))
    }
}

/// Mean squared difference of soft intensity histograms.
pub fn train_hist_loss(sr: &Tensor, hr: &Tensor) -> Result<Tensor> {
    same_shape(sr, hr, "train_hist_loss")?;
    let d = (soft_histogram(sr)? - soft_histogram(hr)?)?;
    Ok(d.sqr()?.mean_all()?)
}

/// The four loss terms as scalar tensors.
pub struct LossComponents {
    pub pix: Tensor,
    pub hist: Tensor,
    pub style: Tensor,
    pub emb: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub pix: f64,
    pub hist: f64,
    pub style: f64,
    pub emb: f64,
    pub total: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl LossComponents {
    pub fn record(&self, weights: &LossWeights) -> Result<LossRecord> {
        let (pix, hist, style, emb) = (
            scalar(&self.pix)?,
            scalar(&self.hist)?,
            scalar(&self.style)?,
            scalar(&self.emb)?,
        );
        Ok(LossRecord {
            pix,
            hist,
            style,
            emb,
            total: total_loss_value(pix, hist, style, emb, weights)?,
        })
    }
}

/// `k1 L_pix + k2 L_hist + k3 L_style + k4 L_L2` on plain values.
pub fn total_loss_value(pix: f64, hist: f64, style: f64, emb: f64, w: &LossWeights) -> Result<f64> {
    for (term, v) in [("pix", pix), ("hist", hist), ("style", style), ("emb", emb)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term, value: v });
        }
    }
    Ok(w.k1 * pix + w.k2 * hist + w.k3 * style + w.k4 * emb)
}

/// Weighted total as a differentiable tensor; rejects non-finite terms.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<Tensor> {
    c.record(w)?;
    let t = ((&c.pix * w.k1)? + (&c.hist * w.k2)?)?;
    let t = (t + (&c.style * w.k3)?)?;
    Ok((t + (&c.emb * w.k4)?)?)
}
