//! Procedural cartoon faces with matching 478-point landmark sets.
//!
//! Used by the examples, the tests and the ablation toy set. Each face has a
//! seeded pose and an expression (mouth opening, smile, brow raise) that moves
//! both the rendered features and the lower-face and brow landmarks.

use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    bicubic_resize, check_scale, DatasetLayout, ImageTensor, LandmarkSet, SamplePair, HR_SIZE, NUM_LANDMARKS,
};
use crate::error::{Error, Result};

const TEMPLATE_SEED: u64 = 0x0f_ace5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expression {
    pub open: f64,
    pub smile: f64,
    pub brow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pose {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

#[derive(Debug, Clone)]
pub struct SynthFace {
    pub image: ImageTensor,
    pub landmarks: LandmarkSet,
    pub expression: Expression,
}

/// Fixed template points in the unit disk, shared by every face.
fn template() -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    (0..NUM_LANDMARKS)
        .map(|_| {
            let r: f64 = rng.random::<f64>().sqrt();
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            [r * t.cos(), r * t.sin(), rng.random_range(-0.1..0.1)]
        })
        .collect()
}

fn place(p: [f64; 3], pose: Pose, e: Expression) -> [f64; 3] {
    let (u, mut v) = (p[0], p[1]);
    if v > 0.3 {
        v += e.open * 0.35 * (v - 0.3);
        v -= e.smile * 0.12 * u.abs();
    } else if v < -0.3 {
        v -= e.brow * 0.15 * (-0.3 - v);
    }
    let x = (pose.cx + 0.9 * u * pose.rx).clamp(0.0, 1.0);
    let y = (pose.cy + 0.9 * v * pose.ry).clamp(0.0, 1.0);
    [x, y, p[2]]
}

fn inside(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

/// Deterministic face of `size x size` pixels for `seed`.
pub fn synth_face(seed: u64, size: usize) -> Result<SynthFace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = Pose {
        cx: rng.random_range(0.45..0.55),
        cy: rng.random_range(0.47..0.55),
        rx: rng.random_range(0.28..0.34),
        ry: rng.random_range(0.36..0.42),
    };
    let e = Expression {
        open: rng.random(),
        smile: rng.random(),
        brow: rng.random(),
    };
    let bg = [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ];
    let skin = [
        rng.random_range(0.55..0.95),
        rng.random_range(0.4..0.75),
        rng.random_range(0.3..0.6),
    ];
    let (cx, cy, rx, ry) = (pose.cx, pose.cy, pose.rx, pose.ry);
    let eye_y = cy - 0.18 * ry;
    let eye_r = 0.14 * rx;
    let brow_y = eye_y - 0.2 * ry - e.brow * 0.08 * ry;
    let mouth_y = cy + 0.45 * ry - e.smile * 0.03 * ry;
    let mouth_w = 0.38 * rx * (1.0 + 0.3 * e.smile);
    let mouth_h = 0.04 * ry + e.open * 0.16 * ry;

    let n = size * size;
    let mut data = vec![0f32; 3 * n];
    for py in 0..size {
        for px in 0..size {
            let x = (px as f64 + 0.5) / size as f64;
            let y = (py as f64 + 0.5) / size as f64;
            let shade = 0.85 + 0.15 * (1.0 - y);
            let mut c = [bg[0] * shade, bg[1] * shade, bg[2] * shade];
            if inside(x, y, cx, cy, rx, ry) {
                let light = 1.0 - 0.25 * ((x - cx) / rx).powi(2);
                c = [skin[0] * light, skin[1] * light, skin[2] * light];
                for side in [-1.0, 1.0] {
                    let ex = cx + side * 0.38 * rx;
                    if inside(x, y, ex, eye_y, eye_r, eye_r * 0.6) {
                        c = [0.95, 0.95, 0.95];
                        if inside(x, y, ex, eye_y, eye_r * 0.45, eye_r * 0.45) {
                            c = [0.1, 0.08, 0.05];
                        }
                    }
                    let tilt = side * (x - ex) * 0.3 * (e.brow - 0.5);
                    if (x - ex).abs() < eye_r * 1.3 && (y - brow_y - tilt).abs() < 0.012 {
                        c = [0.2, 0.12, 0.08];
                    }
                }
                let curve = e.smile * 0.25 * ((x - cx) / mouth_w).powi(2) * mouth_w;
                if inside(x, y + curve, cx, mouth_y, mouth_w, mouth_h) {
                    c = if inside(x, y + curve, cx, mouth_y, mouth_w * 0.8, mouth_h * 0.55) && e.open > 0.3 {
                        [0.25, 0.05, 0.05]
                    } else {
                        [0.7, 0.2, 0.25]
                    };
                }
                if (x - cx).abs() < 0.02 && y > eye_y + 0.05 * ry && y < mouth_y - mouth_h - 0.04 * ry {
                    c = [c[0] * 0.85, c[1] * 0.85, c[2] * 0.85];
                }
            }
            for (ch, v) in c.iter().enumerate() {
                data[ch * n + py * size + px] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let image = ImageTensor::new(Tensor::from_vec(data, (1, 3, size, size), &Device::Cpu)?)?;
    // Round through 8 bits so in-memory faces match what a PNG round-trip yields.
    let image = ImageTensor::from_rgb8(&image.to_rgb8()?, size, size)?;
    let landmarks = LandmarkSet::new(template().into_iter().map(|p| place(p, pose, e)).collect())?;
    Ok(SynthFace {
        image,
        landmarks,
        expression: e,
    })
}

/// Uniform RGB noise of shape `(1, 3, size, size)`.
pub fn noise_image(seed: u64, size: usize) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..3 * size * size).map(|_| rng.random()).collect();
    ImageTensor::new(Tensor::from_vec(v, (1, 3, size, size), &Device::Cpu)?)
}

pub fn sample_id(index: usize) -> String {
    format!("face{index:05}")
}

/// `n` in-memory training pairs at `scale`, faces seeded from `seed + i`.
pub fn synth_pairs(n: usize, seed: u64, scale: usize) -> Result<Vec<SamplePair>> {
    check_scale(scale)?;
    (0..n)
        .map(|i| {
            let face = synth_face(seed.wrapping_add(i as u64), HR_SIZE)?;
            let lr_side = HR_SIZE / scale;
            Ok(SamplePair {
                id: sample_id(i),
                lr: bicubic_resize(&face.image, lr_side, lr_side)?,
                hr: face.image,
                landmarks: face.landmarks,
                scale,
            })
        })
        .collect()
}

/// Write `n` faces of `size` pixels as an on-disk dataset under `root`.
pub fn write_dataset(root: &Path, n: usize, seed: u64, size: usize) -> Result<DatasetLayout> {
    let layout = DatasetLayout::under(root);
    for dir in [&layout.image_dir, &layout.landmark_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut manifest = String::new();
    for i in 0..n {
        let id = sample_id(i);
        let face = synth_face(seed.wrapping_add(i as u64), size)?;
        face.image.save_png(&layout.image_dir.join(format!("{id}.png")))?;
        face.landmarks.save(&layout.landmark_path(&id))?;
        manifest.push_str(&id);
        manifest.push('\n');
    }
    fs::write(&layout.manifest, manifest).map_err(|e| Error::io(&layout.manifest, e))?;
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faces_are_deterministic() {
        let a = synth_face(5, 64).unwrap();
        let b = synth_face(5, 64).unwrap();
        assert_eq!(a.image.to_rgb8().unwrap(), b.image.to_rgb8().unwrap());
        assert_eq!(a.landmarks, b.landmarks);
        let c = synth_face(6, 64).unwrap();
        assert_ne!(a.landmarks, c.landmarks);
    }

    #[test]
    fn landmarks_are_valid() {
        let f = synth_face(1, 128).unwrap();
        assert_eq!(f.landmarks.coords().len(), NUM_LANDMARKS);
        assert!(f
            .landmarks
            .coords()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
    }

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let layout = write_dataset(dir.path(), 2, 10, HR_SIZE).unwrap();
        let mem = synth_pairs(2, 10, 4).unwrap();
        for (i, m) in mem.iter().enumerate() {
            let d = layout.load(&sample_id(i), 4, None).unwrap();
            assert_eq!(d.hr.to_rgb8().unwrap(), m.hr.to_rgb8().unwrap());
            assert_eq!(d.landmarks.coords().len(), m.landmarks.coords().len());
            for (p, q) in d.landmarks.coords().iter().zip(m.landmarks.coords()) {
                assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
            }
        }
    }
}
