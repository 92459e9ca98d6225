//! Image and landmark ingestion, bicubic degradation, and dataset splits.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Side length of the canonical high-resolution crop.
pub const HR_SIZE: usize = 128;
pub const NUM_LANDMARKS: usize = 478;
/// Cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

/// Batched RGB image data `(batch, 3, height, width)` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    /// Wraps a tensor, rejecting non-finite values and clamping the rest to `[0, 1]`.
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, _, _) = t
            .dims4()
            .map_err(|_| Error::Shape(format!("image tensor must be 4-D, got {:?}", t.dims())))?;
        if c != 3 {
            return Err(Error::Shape(format!("image tensor must have 3 channels, got {c}")));
        }
        ensure_finite(&t)?;
        Ok(Self(t.clamp(0f64, 1f64)?))
    }

    /// Interleaved 8-bit RGB pixels to a `(1, 3, h, w)` f32 image.
    pub fn from_rgb8(pixels: &[u8], height: usize, width: usize) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} bytes for {height}x{width} RGB, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        let data: Vec<f32> = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
        let t = Tensor::from_vec(data, (1, height, width, 3), &Device::Cpu)?.permute((0, 3, 1, 2))?;
        Ok(Self(t.contiguous()?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.0.dims4().expect("validated at construction")
    }

    pub fn batch(&self) -> usize {
        self.dims().0
    }

    pub fn height(&self) -> usize {
        self.dims().2
    }

    pub fn width(&self) -> usize {
        self.dims().3
    }

    /// The `i`-th image of the batch as a batch of one.
    pub fn get(&self, i: usize) -> Result<Self> {
        Ok(Self(self.0.narrow(0, i, 1)?))
    }

    pub fn stack(images: &[ImageTensor]) -> Result<Self> {
        let ts: Vec<&Tensor> = images.iter().map(|i| &i.0).collect();
        Ok(Self(Tensor::cat(&ts, 0)?))
    }

    /// Quantize the first image in the batch to interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        let t = self
            .0
            .narrow(0, 0, 1)?
            .squeeze(0)?
            .permute((1, 2, 0))?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok(t.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let rgb = self.to_rgb8()?;
        let img = image::RgbImage::from_raw(self.width() as u32, self.height() as u32, rgb)
            .expect("buffer length matches dimensions");
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_image(&bytes, path)
    }
}

fn decode_image(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::from_rgb8(rgb.as_raw(), h as usize, w as usize)
}

pub(crate) fn ensure_finite(t: &Tensor) -> Result<()> {
    let bad = t
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .into_iter()
        .any(|v| !v.is_finite());
    if bad {
        return Err(Error::DataIntegrity("non-finite pixel values".into()));
    }
    Ok(())
}

/// Cubic convolution kernel `W(x)` with coefficient [`CUBIC_A`].
pub fn cubic_weight(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Row-stochastic `(out_len, in_len)` interpolation matrix for one axis.
///
/// Pixel centres are aligned (half-pixel convention) and taps falling outside
/// the input are clamped to the border sample.
pub fn bicubic_matrix(in_len: usize, out_len: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        let frac = src - base;
        for k in -1i64..=2 {
            let w = cubic_weight(frac - k as f64);
            if w == 0.0 {
                continue;
            }
            let idx = (base as i64 + k).clamp(0, in_len as i64 - 1) as usize;
            m[o * in_len + idx] += w;
        }
    }
    m
}

/// Differentiable separable bicubic resize of a `(b, c, h, w)` tensor. No clamping.
pub fn resize_tensor(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be at least 1x1".into()));
    }
    let dev = x.device();
    let my = Tensor::from_vec(bicubic_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let mx = Tensor::from_vec(bicubic_matrix(w, out_w), (out_w, w), dev)?.to_dtype(x.dtype())?;
    let rows = x.broadcast_matmul(&mx.t()?)?;
    Ok(my.broadcast_matmul(&rows)?)
}

/// Bicubic resampling of an image; the result is clamped to `[0, 1]`.
pub fn bicubic_resize(img: &ImageTensor, target_h: usize, target_w: usize) -> Result<ImageTensor> {
    ensure_finite(img.tensor())?;
    let out = resize_tensor(img.tensor(), target_h, target_w)?;
    ImageTensor::new(out)
}

/// 478 facial landmarks; `x`, `y` are normalized to the image, `z` is relative depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    coords: Vec<[f64; 3]>,
}

impl LandmarkSet {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.len() != NUM_LANDMARKS {
            return Err(Error::DataIntegrity(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                coords.len()
            )));
        }
        for (i, p) in coords.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::DataIntegrity(format!("landmark {i} is not finite")));
            }
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(Error::DataIntegrity(format!(
                    "landmark {i} ({}, {}) lies outside the unit square",
                    p[0], p[1]
                )));
            }
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    /// Parse the comma-separated sidecar text format (one `x,y,z` row per landmark).
    pub fn parse(text: &str) -> Result<Self> {
        let mut coords = Vec::with_capacity(NUM_LANDMARKS);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::DataIntegrity(format!(
                    "line {}: expected 3 comma-separated values, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f64>()
                    .map_err(|e| Error::DataIntegrity(format!("line {}: `{f}`: {e}", lineno + 1)))?;
            }
            coords.push(p);
        }
        Self::new(coords)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Landmarks {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(NUM_LANDMARKS * 24);
        for p in &self.coords {
            s.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Snap `(x, y)` to the pixel centres of an `h x w` grid, as a detector
    /// running on that resolution would report them.
    pub fn quantized(&self, h: usize, w: usize) -> Self {
        let snap = |v: f64, n: usize| ((v * n as f64).floor().min(n as f64 - 1.0) + 0.5) / n as f64;
        Self {
            coords: self
                .coords
                .iter()
                .map(|p| [snap(p[0], w), snap(p[1], h), p[2]])
                .collect(),
        }
    }

    /// `(n, 478, 3)` node-feature tensor from a batch of landmark sets.
    pub fn batch_tensor(sets: &[&LandmarkSet], dtype: DType) -> Result<Tensor> {
        let data: Vec<f64> = sets
            .iter()
            .flat_map(|s| s.coords.iter().flat_map(|p| p.iter().copied()))
            .collect();
        Ok(Tensor::from_vec(data, (sets.len(), NUM_LANDMARKS, 3), &Device::Cpu)?.to_dtype(dtype)?)
    }
}

#[derive(Debug, Clone)]
pub struct SamplePair {
    pub id: String,
    pub hr: ImageTensor,
    pub lr: ImageTensor,
    pub landmarks: LandmarkSet,
    pub scale: usize,
}

pub fn check_scale(scale: usize) -> Result<()> {
    match scale {
        4 | 8 => Ok(()),
        s => Err(Error::UnsupportedScale(s)),
    }
}

/// Centre-crops to a square, resizes to 128x128, and derives the LR input.
///
/// Landmark coordinates are re-expressed relative to the crop; points that fall
/// outside it are clamped to the crop border.
pub fn load_sample(image_path: &Path, landmark_path: &Path, scale: usize) -> Result<SamplePair> {
    check_scale(scale)?;
    let image_bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let lmk_text = fs::read_to_string(landmark_path).map_err(|e| Error::io(landmark_path, e))?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    sample_from_bytes(id, &image_bytes, image_path, &lmk_text, landmark_path, scale)
}

fn sample_from_bytes(
    id: String,
    image_bytes: &[u8],
    image_path: &Path,
    lmk_text: &str,
    landmark_path: &Path,
    scale: usize,
) -> Result<SamplePair> {
    let landmarks = LandmarkSet::parse(lmk_text).map_err(|e| Error::Landmarks {
        path: landmark_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let img = decode_image(image_bytes, image_path)?;
    let (_, _, h, w) = img.dims();
    let side = h.min(w);
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    let cropped = img.tensor().narrow(2, top, side)?.narrow(3, left, side)?;
    let hr = if side == HR_SIZE {
        ImageTensor::new(cropped.contiguous()?)?
    } else {
        bicubic_resize(&ImageTensor::new(cropped)?, HR_SIZE, HR_SIZE)?
    };
    let lr_side = HR_SIZE / scale;
    let lr = bicubic_resize(&hr, lr_side, lr_side)?;
    let landmarks = if side == h && side == w {
        landmarks
    } else {
        let coords = landmarks
            .coords()
            .iter()
            .map(|p| {
                let x = ((p[0] * w as f64 - left as f64) / side as f64).clamp(0.0, 1.0);
                let y = ((p[1] * h as f64 - top as f64) / side as f64).clamp(0.0, 1.0);
                [x, y, p[2]]
            })
            .collect();
        LandmarkSet::new(coords)?
    };
    Ok(SamplePair {
        id,
        hr,
        lr,
        landmarks,
        scale,
    })
}

/// Like [`load_sample`], but memoizes decoded pairs under `cache_dir`, keyed by
/// a digest of both input files and the scale.
pub fn load_sample_cached(
    image_path: &Path,
    landmark_path: &Path,
    scale: usize,
    cache_dir: Option<&Path>,
) -> Result<SamplePair> {
    let Some(dir) = cache_dir else {
        return load_sample(image_path, landmark_path, scale);
    };
    check_scale(scale)?;
    let image_bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let lmk_text = fs::read_to_string(landmark_path).map_err(|e| Error::io(landmark_path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&image_bytes);
    hasher.update(lmk_text.as_bytes());
    hasher.update((scale as u64).to_le_bytes());
    let key = hex::encode(hasher.finalize());
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let entry = dir.join(format!("{key}.sample"));
    if let Ok(bytes) = fs::read(&entry) {
        if let Some(pair) = decode_cached(&bytes, &id, scale) {
            return Ok(pair);
        }
        log::warn!("ignoring corrupt cache entry {}", entry.display());
    }
    let pair = sample_from_bytes(id, &image_bytes, image_path, &lmk_text, landmark_path, scale)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&entry, encode_cached(&pair)?).map_err(|e| Error::io(&entry, e))?;
    Ok(pair)
}

fn encode_cached(pair: &SamplePair) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for t in [pair.hr.tensor(), pair.lr.tensor()] {
        for v in t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()? {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in pair.landmarks.coords() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_cached(bytes: &[u8], id: &str, scale: usize) -> Option<SamplePair> {
    let lr_side = HR_SIZE / scale;
    let hr_n = 3 * HR_SIZE * HR_SIZE;
    let lr_n = 3 * lr_side * lr_side;
    if bytes.len() != (hr_n + lr_n) * 4 + NUM_LANDMARKS * 3 * 8 {
        return None;
    }
    let f32s: Vec<f32> = bytes[..(hr_n + lr_n) * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let f64s: Vec<f64> = bytes[(hr_n + lr_n) * 4..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let hr = Tensor::from_vec(f32s[..hr_n].to_vec(), (1, 3, HR_SIZE, HR_SIZE), &Device::Cpu).ok()?;
    let lr = Tensor::from_vec(f32s[hr_n..].to_vec(), (1, 3, lr_side, lr_side), &Device::Cpu).ok()?;
    let coords = f64s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Some(SamplePair {
        id: id.to_string(),
        hr: ImageTensor::new(hr).ok()?,
        lr: ImageTensor::new(lr).ok()?,
        landmarks: LandmarkSet::new(coords).ok()?,
        scale,
    })
}

/// Seeded shuffle followed by a cut: returns `(train_ids, eval_ids)`.
pub fn make_split(ids: &[String], eval_count: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if eval_count >= ids.len() {
        return Err(Error::Config(format!(
            "eval_count {eval_count} must be smaller than the number of ids ({})",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = shuffled.split_off(eval_count);
    Ok((train, shuffled))
}

/// Newline-separated id list; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// On-disk dataset: `images/<id>.png`, `landmarks/<id>.lmk`, `manifest.txt`.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub image_dir: PathBuf,
    pub landmark_dir: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetLayout {
    pub fn under(root: &Path) -> Self {
        Self {
            image_dir: root.join("images"),
            landmark_dir: root.join("landmarks"),
            manifest: root.join("manifest.txt"),
        }
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf> {
        for ext in ["png", "jpg", "jpeg"] {
            let p = self.image_dir.join(format!("{id}.{ext}"));
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::io(
            self.image_dir.join(format!("{id}.png")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        ))
    }

    pub fn landmark_path(&self, id: &str) -> PathBuf {
        self.landmark_dir.join(format!("{id}.lmk"))
    }

    pub fn load(&self, id: &str, scale: usize, cache: Option<&Path>) -> Result<SamplePair> {
        load_sample_cached(&self.image_path(id)?, &self.landmark_path(id), scale, cache)
    }
}
