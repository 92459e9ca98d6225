//! RRDB super-resolution trunk with bicubic upsampling stages and a global
//! bicubic residual.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{check_scale, resize_tensor, HR_SIZE};
use crate::error::{Error, Result};
use crate::msaf::Msaf;
use crate::nn::{leaky_relu, Conv2d, InstanceNorm, Mode};
use crate::params::ParamBuilder;

pub const RDBS_PER_RRDB: usize = 3;
pub const CONVS_PER_RDB: usize = 5;
pub const NUM_FUSIONS: usize = 3;

/// Init gain of the outer convs: the common `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub const DEFAULT_GAIN: f64 = 0.577_350_269_189_625_8;
/// Init gain inside dense blocks: Kaiming variance scaled down by 0.1.
pub const DENSE_GAIN: f64 = 0.141_421_356_237_309_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub channels: usize,
    pub growth: usize,
    pub blocks: usize,
    pub residual_scale: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            growth: 32,
            blocks: 8,
            residual_scale: 0.2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.growth == 0 || self.blocks == 0 {
            return Err(Error::Config("backbone widths and block count must be positive".into()));
        }
        Ok(())
    }

    /// RRDB indices (1-based) after which the first two fusions happen; the
    /// third follows the trunk conv. Eight blocks give 3 and 6.
    pub fn fusion_points(&self) -> [usize; 2] {
        let n = self.blocks;
        [(3 * n).div_ceil(8).max(1), (6 * n).div_ceil(8).max(1)]
    }
}

/// Five densely connected convolutions with a scaled residual.
pub struct Rdb {
    convs: Vec<Conv2d>,
    norms: Option<Vec<InstanceNorm>>,
    pub residual_scale: f64,
    channels: usize,
}

impl Rdb {
    pub fn new(
        pb: &ParamBuilder,
        channels: usize,
        growth: usize,
        residual_scale: f64,
        instance_norm: bool,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(CONVS_PER_RDB);
        let mut norms = Vec::with_capacity(CONVS_PER_RDB);
        for i in 0..CONVS_PER_RDB {
            let c_in = channels + i * growth;
            let c_out = if i + 1 == CONVS_PER_RDB { channels } else { growth };
            convs.push(Conv2d::new(
                &pb.pp(format!("conv{}", i + 1)),
                c_in,
                c_out,
                3,
                DENSE_GAIN,
            )?);
            if instance_norm {
                norms.push(InstanceNorm::new(&pb.pp(format!("norm{}", i + 1)), c_out)?);
            }
        }
        Ok(Self {
            convs,
            norms: instance_norm.then_some(norms),
            residual_scale,
            channels,
        })
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    /// The un-scaled output of the fifth convolution.
    pub fn dense_path(&self, x: &Tensor) -> Result<Tensor> {
        let mut feats = vec![x.clone()];
        let mut out = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if feats.len() == 1 {
                feats[0].clone()
            } else {
                let refs: Vec<&Tensor> = feats.iter().collect();
                Tensor::cat(&refs, 1)?
            };
            let mut y = conv.forward(&input)?;
            if let Some(norms) = &self.norms {
                y = norms[i].forward(&y)?;
            }
            if i + 1 < self.convs.len() {
                y = leaky_relu(&y)?;
                feats.push(y);
            } else {
                out = y;
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.channels)?;
        if self.residual_scale == 0.0 {
            return Ok(x.clone());
        }
        Ok((x + (self.dense_path(x)? * self.residual_scale)?)?)
    }
}

fn check_channels(x: &Tensor, channels: usize) -> Result<()> {
    let c = x.dim(1)?;
    if c != channels {
        return Err(Error::Shape(format!("expected {channels} channels, got {c}")));
    }
    Ok(())
}

/// Three RDBs in sequence wrapped in a scaled residual.
pub struct Rrdb {
    pub rdbs: Vec<Rdb>,
    pub residual_scale: f64,
    channels: usize,
}

impl Rrdb {
    pub fn new(pb: &ParamBuilder, cfg: &BackboneConfig, instance_norm: bool) -> Result<Self> {
        let rdbs = (0..RDBS_PER_RRDB)
            .map(|i| {
                Rdb::new(
                    &pb.pp(format!("rdb{}", i + 1)),
                    cfg.channels,
                    cfg.growth,
                    cfg.residual_scale,
                    instance_norm,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rdbs,
            residual_scale: cfg.residual_scale,
            channels: cfg.channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.channels)?;
        if self.residual_scale == 0.0 {
            return Ok(x.clone());
        }
        let mut y = x.clone();
        for rdb in &self.rdbs {
            y = rdb.forward(&y)?;
        }
        Ok((x + (y * self.residual_scale)?)?)
    }
}

/// Bicubic x2 resize followed by conv and leaky ReLU.
pub fn upsample_stage(x: &Tensor, conv: &Conv2d, factor: usize) -> Result<Tensor> {
    if factor != 2 {
        return Err(Error::Config(format!(
            "upsample factor {factor} unsupported, expected 2"
        )));
    }
    let (_, _, h, w) = x.dims4()?;
    let up = resize_tensor(x, h * factor, w * factor)?;
    leaky_relu(&conv.forward(&up)?)
}

pub struct Backbone {
    cfg: BackboneConfig,
    scale: usize,
    pub stem: Conv2d,
    pub blocks: Vec<Rrdb>,
    pub trunk: Conv2d,
    pub upsample: Vec<Conv2d>,
    pub hr_conv: Conv2d,
    pub out_conv: Conv2d,
    fusion: Option<Vec<Msaf>>,
}

impl Backbone {
    /// `fusion`, when present, must hold exactly [`NUM_FUSIONS`] blocks.
    pub fn new(
        pb: &ParamBuilder,
        cfg: BackboneConfig,
        scale: usize,
        instance_norm: bool,
        fusion: Option<Vec<Msaf>>,
    ) -> Result<Self> {
        cfg.validate()?;
        check_scale(scale)?;
        if let Some(f) = &fusion {
            if f.len() != NUM_FUSIONS {
                return Err(Error::Config(format!(
                    "expected {NUM_FUSIONS} fusion blocks, got {}",
                    f.len()
                )));
            }
        }
        let nf = cfg.channels;
        let stages = scale.trailing_zeros() as usize;
        Ok(Self {
            cfg,
            scale,
            stem: Conv2d::new(&pb.pp("stem"), 3, nf, 3, DEFAULT_GAIN)?,
            blocks: (0..cfg.blocks)
                .map(|i| Rrdb::new(&pb.pp(format!("rrdb{i}")), &cfg, instance_norm))
                .collect::<Result<Vec<_>>>()?,
            trunk: Conv2d::new(&pb.pp("trunk"), nf, nf, 3, DEFAULT_GAIN)?,
            upsample: (0..stages)
                .map(|i| Conv2d::new(&pb.pp(format!("up{i}")), nf, nf, 3, DEFAULT_GAIN))
                .collect::<Result<Vec<_>>>()?,
            hr_conv: Conv2d::new(&pb.pp("hr_conv"), nf, nf, 3, DEFAULT_GAIN)?,
            out_conv: Conv2d::new(&pb.pp("out_conv"), nf, 3, 3, DEFAULT_GAIN)?,
            fusion,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn lr_size(&self) -> usize {
        HR_SIZE / self.scale
    }

    pub fn has_fusion(&self) -> bool {
        self.fusion.is_some()
    }

    /// Super-resolve `(b, 3, h, w)` to `(b, 3, 128, 128)`; unclamped.
    ///
    /// `fusion_inputs` carries one graph map per fusion point when the
    /// backbone was built with fusion blocks, and must be empty otherwise.
    pub fn forward(&self, lr: &Tensor, fusion_inputs: &[Tensor], mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = lr.dims4()?;
        let side = self.lr_size();
        if c != 3 || h != side || w != side {
            return Err(Error::Shape(format!(
                "x{} backbone expects (b, 3, {side}, {side}) input, got {:?}",
                self.scale,
                lr.dims()
            )));
        }
        let expected = if self.fusion.is_some() { NUM_FUSIONS } else { 0 };
        if fusion_inputs.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} fusion inputs, got {}",
                fusion_inputs.len()
            )));
        }
        let fuse = |k: usize, x: Tensor| -> Result<Tensor> {
            match &self.fusion {
                Some(f) => f[k].fuse(&x, &fusion_inputs[k], mode),
                None => Ok(x),
            }
        };
        let points = self.cfg.fusion_points();
        let feat = self.stem.forward(lr)?;
        let mut x = feat.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            for (k, &p) in points.iter().enumerate() {
                if p == i + 1 {
                    x = fuse(k, x)?;
                }
            }
        }
        x = fuse(2, self.trunk.forward(&x)?)?;
        x = (feat + x)?;
        for conv in &self.upsample {
            x = upsample_stage(&x, conv, 2)?;
        }
        let x = self.out_conv.forward(&leaky_relu(&self.hr_conv.forward(&x)?)?)?;
        Ok((x + resize_tensor(lr, HR_SIZE, HR_SIZE)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::{DType, Device};

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            channels: 4,
            growth: 2,
            blocks: 1,
            residual_scale: 0.2,
        }
    }

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs(t: &Tensor) -> f64 {
        t.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn fusion_points_for_eight_blocks() {
        assert_eq!(BackboneConfig::default().fusion_points(), [3, 6]);
        assert_eq!(tiny().fusion_points(), [1, 1]);
    }

    #[test]
    fn rdb_shape_and_zero_beta_identity() {
        let store = ParamStore::new(DType::F64, 0);
        let rdb = Rdb::new(&store.root(), 4, 2, 0.2, true).unwrap();
        let x = ramp(&[1, 4, 5, 5]);
        assert_eq!(rdb.forward(&x).unwrap().dims(), x.dims());
        let rdb0 = Rdb::new(&store.root().pp("b"), 4, 2, 0.0, true).unwrap();
        assert_eq!(max_abs(&(rdb0.forward(&x).unwrap() - &x).unwrap()), 0.0);
        assert!(rdb.forward(&ramp(&[1, 3, 5, 5])).is_err());
    }

    #[test]
    fn rdb_zero_weights_zero_input() {
        let store = ParamStore::new(DType::F64, 0);
        let rdb = Rdb::new(&store.root(), 4, 2, 0.2, false).unwrap();
        for c in rdb.convs() {
            c.weight.set(&c.weight.zeros_like().unwrap()).unwrap();
        }
        let x = Tensor::zeros((1, 4, 3, 3), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(max_abs(&rdb.forward(&x).unwrap()), 0.0);
    }

    #[test]
    fn rrdb_matches_step_by_step_composition() {
        let store = ParamStore::new(DType::F64, 1);
        let cfg = tiny();
        let rrdb = Rrdb::new(&store.root(), &cfg, true).unwrap();
        let x = ramp(&[2, 4, 6, 6]);
        let mut y = x.clone();
        for rdb in &rrdb.rdbs {
            y = (&y + (rdb.dense_path(&y).unwrap() * 0.2).unwrap()).unwrap();
        }
        let expected = (&x + (y * 0.2).unwrap()).unwrap();
        assert!(max_abs(&(rrdb.forward(&x).unwrap() - expected).unwrap()) < 1e-12);

        let cfg0 = BackboneConfig {
            residual_scale: 0.0,
            ..cfg
        };
        let rrdb0 = Rrdb::new(&store.root().pp("z"), &cfg0, true).unwrap();
        assert_eq!(max_abs(&(rrdb0.forward(&x).unwrap() - &x).unwrap()), 0.0);
    }

    #[test]
    fn upsample_stage_sizes() {
        let store = ParamStore::new(DType::F64, 2);
        let conv = Conv2d::new(&store.root(), 4, 4, 3, 1.0).unwrap();
        let x = ramp(&[1, 4, 16, 16]);
        assert_eq!(upsample_stage(&x, &conv, 2).unwrap().dims(), &[1, 4, 32, 32]);
        assert!(upsample_stage(&x, &conv, 3).is_err());
    }

    #[test]
    fn output_sizes_for_both_scales() {
        for (scale, side) in [(4, 32), (8, 16)] {
            let store = ParamStore::new(DType::F32, 3);
            let bb = Backbone::new(&store.root(), tiny(), scale, true, None).unwrap();
            assert_eq!(bb.upsample.len(), if scale == 4 { 2 } else { 3 });
            let lr = ramp(&[1, 3, side, side]).to_dtype(DType::F32).unwrap();
            assert_eq!(bb.forward(&lr, &[], Mode::Eval).unwrap().dims(), &[1, 3, 128, 128]);
            let wrong = ramp(&[1, 3, side * 2, side * 2]).to_dtype(DType::F32).unwrap();
            assert!(bb.forward(&wrong, &[], Mode::Eval).is_err());
        }
    }

    #[test]
    fn zero_network_is_bicubic_upsample() {
        let store = ParamStore::new(DType::F64, 4);
        let bb = Backbone::new(&store.root(), tiny(), 8, true, None).unwrap();
        for (_, v) in store.trainable() {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let lr = ramp(&[1, 3, 16, 16]);
        let out = bb.forward(&lr, &[], Mode::Eval).unwrap();
        let bic = resize_tensor(&lr, 128, 128).unwrap();
        assert_eq!(max_abs(&(out - bic).unwrap()), 0.0);
    }

    #[test]
    fn zero_beta_reduces_trunk() {
        let store = ParamStore::new(DType::F64, 5);
        let cfg = BackboneConfig {
            residual_scale: 0.0,
            ..tiny()
        };
        let bb = Backbone::new(&store.root(), cfg, 4, true, None).unwrap();
        let lr = ramp(&[1, 3, 32, 32]);
        let out = bb.forward(&lr, &[], Mode::Eval).unwrap();
        let feat = bb.stem.forward(&lr).unwrap();
        let mut x = (&feat + bb.trunk.forward(&feat).unwrap()).unwrap();
        for conv in &bb.upsample {
            let (_, _, h, w) = x.dims4().unwrap();
            x = leaky_relu(&conv.forward(&resize_tensor(&x, 2 * h, 2 * w).unwrap()).unwrap()).unwrap();
        }
        let x = bb
            .out_conv
            .forward(&leaky_relu(&bb.hr_conv.forward(&x).unwrap()).unwrap())
            .unwrap();
        let expected = (x + resize_tensor(&lr, 128, 128).unwrap()).unwrap();
        assert!(max_abs(&(out - expected).unwrap()) < 1e-12);
    }

    #[test]
    fn fusion_count_checked() {
        let store = ParamStore::new(DType::F32, 6);
        let bb = Backbone::new(&store.root(), tiny(), 8, false, None).unwrap();
        let lr = ramp(&[1, 3, 16, 16]).to_dtype(DType::F32).unwrap();
        let map = Tensor::zeros((1, 4, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(bb.forward(&lr, &[map], Mode::Eval).is_err());
    }
}
