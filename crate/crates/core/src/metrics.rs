//! Image quality metrics and the emotion consistency metric (ECM).

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::fer::{classify, ConfidenceVector, FerPlugin};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const CONFIDENCE_BINS: usize = 10;
pub const ECM_ALPHA: f64 = 0.5;
/// Floor applied to `L_conf` before the logarithm.
pub const ECM_EPS: f64 = 1e-6;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn values(img: &ImageTensor) -> Result<Vec<f64>> {
    Ok(img.tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// PSNR in dB for a unit peak; capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let (x, y) = (values(a)?, values(b)?);
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// ITU-R BT.601 luma planes, one per batch image.
fn luma_planes(img: &ImageTensor) -> Result<Vec<Vec<f64>>> {
    let (b, _, h, w) = img.dims();
    let v = values(img)?;
    let plane = h * w;
    Ok((0..b)
        .map(|i| {
            let base = i * 3 * plane;
            (0..plane)
                .map(|p| 0.299 * v[base + p] + 0.587 * v[base + plane + p] + 0.114 * v[base + 2 * plane + p])
                .collect()
        })
        .collect())
}

pub fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean local SSIM on luma with an 11-tap Gaussian window (sigma 1.5), averaged over the batch.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let (_, _, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let (pa, pb) = (luma_planes(a)?, luma_planes(b)?);
    let s: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, h, w)).sum();
    Ok(s / pa.len() as f64)
}

/// Shannon entropy (natural log) with `0 ln 0 = 0`.
pub fn entropy(p: &ConfidenceVector) -> f64 {
    -p.probs().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Per-class frequency histograms of confidence values over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHistogram {
    /// `counts[c][bin]`
    counts: Vec<[u64; CONFIDENCE_BINS]>,
    samples: u64,
}

pub fn confidence_bin(p: f64) -> usize {
    ((p * CONFIDENCE_BINS as f64).floor().max(0.0) as usize).min(CONFIDENCE_BINS - 1)
}

impl ConfidenceHistogram {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![[0; CONFIDENCE_BINS]; num_classes],
            samples: 0,
        }
    }

    pub fn from_vectors(vectors: &[ConfidenceVector]) -> Result<Self> {
        let c = vectors.first().map(|v| v.num_classes()).unwrap_or(0);
        let mut h = Self::new(c);
        for v in vectors {
            h.add(v)?;
        }
        Ok(h)
    }

    pub fn add(&mut self, v: &ConfidenceVector) -> Result<()> {
        if v.num_classes() != self.counts.len() {
            return Err(Error::Shape(format!(
                "confidence vector has {} classes, histogram {}",
                v.num_classes(),
                self.counts.len()
            )));
        }
        for (c, &p) in v.probs().iter().enumerate() {
            self.counts[c][confidence_bin(p)] += 1;
        }
        self.samples += 1;
        Ok(())
    }

    /// Combine partial histograms built over disjoint shards.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::Shape("histograms have different class counts".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.samples += other.samples;
        Ok(())
    }

    pub fn frequencies(&self, class: usize) -> [f64; CONFIDENCE_BINS] {
        let mut f = [0.0; CONFIDENCE_BINS];
        if self.samples > 0 {
            for (slot, &n) in f.iter_mut().zip(&self.counts[class]) {
                *slot = n as f64 / self.samples as f64;
            }
        }
        f
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// `sum_c sum_bin (f_orig - f_sr)^2` over per-class confidence histograms.
pub fn histogram_loss(orig: &[ConfidenceVector], sr: &[ConfidenceVector]) -> Result<f64> {
    if orig.is_empty() || orig.len() != sr.len() {
        return Err(Error::Shape(format!(
            "histogram loss needs equal non-empty sets, got {} and {}",
            orig.len(),
            sr.len()
        )));
    }
    let ho = ConfidenceHistogram::from_vectors(orig)?;
    let hs = ConfidenceHistogram::from_vectors(sr)?;
    if ho.num_classes() != hs.num_classes() {
        return Err(Error::Shape("class counts differ between sets".into()));
    }
    Ok((0..ho.num_classes())
        .map(|c| {
            let (fo, fs) = (ho.frequencies(c), hs.frequencies(c));
            fo.iter().zip(&fs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmReport {
    pub l_h: f64,
    pub l_conf: f64,
    pub alpha: f64,
    pub ecm: f64,
    pub num_samples: usize,
}

pub fn ecm_value(l_h: f64, l_conf: f64) -> f64 {
    ECM_ALPHA * l_h + l_conf.max(ECM_EPS).ln()
}

/// ECM from paired confidence vectors (original image, super-resolved image).
pub fn ecm_from_confidences(orig: &[ConfidenceVector], sr: &[ConfidenceVector]) -> Result<EcmReport> {
    let l_h = histogram_loss(orig, sr)?;
    let n = orig.len();
    let l_conf = orig
        .iter()
        .zip(sr)
        .map(|(a, b)| (entropy(a) - entropy(b)).abs())
        .sum::<f64>()
        / n as f64;
    Ok(EcmReport {
        l_h,
        l_conf,
        alpha: ECM_ALPHA,
        ecm: ecm_value(l_h, l_conf),
        num_samples: n,
    })
}

/// Classify every pair with `plugin` and compute the ECM.
pub fn ecm(orig: &[ImageTensor], sr: &[ImageTensor], plugin: &mut dyn FerPlugin) -> Result<EcmReport> {
    if orig.len() != sr.len() || orig.is_empty() {
        return Err(Error::Shape(format!(
            "ecm needs equal non-empty image lists, got {} and {}",
            orig.len(),
            sr.len()
        )));
    }
    let mut po = Vec::with_capacity(orig.len());
    let mut ps = Vec::with_capacity(sr.len());
    for (i, (o, s)) in orig.iter().zip(sr).enumerate() {
        let id = format!("#{i}");
        po.push(classify(o, plugin, &id)?);
        ps.push(classify(s, plugin, &id)?);
    }
    ecm_from_confidences(&po, &ps)
}

/// Perceptual distance provider; the network itself lives outside this crate.
pub trait LpipsPlugin {
    fn name(&self) -> &str;
    fn distance(&mut self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
}

/// `None` when no plugin is configured or the plugin fails (logged as a warning).
pub fn lpips(a: &ImageTensor, b: &ImageTensor, plugin: Option<&mut (dyn LpipsPlugin + '_)>) -> Option<f64> {
    let plugin = plugin?;
    match plugin.distance(a, b) {
        Ok(d) if d.is_finite() => Some(d),
        Ok(d) => {
            log::warn!("lpips plugin `{}` returned {d}; metric unavailable", plugin.name());
            None
        }
        Err(e) => {
            log::warn!("lpips plugin `{}` failed: {e}; metric unavailable", plugin.name());
            None
        }
    }
}
