//! Multimodal split-attention fusion between backbone features and the
//! rasterized landmark-graph map.
//!
//! Each modality is split into channel blocks of width `C`. Block sums are
//! pooled into a per-modality descriptor, the descriptors are summed into a
//! joint descriptor `G`, and `Z = ReLU(BN(W_Z G + b_Z))` (length `C / r`) drives
//! a softmax over the blocks of every modality, per channel. The backbone
//! modality, re-weighted and reassembled, is the output; the graph modality
//! only steers the attention.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{softmax, BatchNorm1d, Linear, Mode};
use crate::params::ParamBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MsafConfig {
    /// Channel width of one block.
    pub block_channels: usize,
    pub reduction: usize,
}

impl MsafConfig {
    pub fn reduced(&self) -> usize {
        self.block_channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels == 0 || self.reduction == 0 || self.reduced() == 0 {
            return Err(Error::Config(format!(
                "msaf block width {} with reduction {} leaves no joint channels",
                self.block_channels, self.reduction
            )));
        }
        Ok(())
    }
}

pub fn num_blocks(channels: usize, block: usize) -> usize {
    channels.div_ceil(block)
}

/// Split `(b, channels, h, w)` into `ceil(channels / block)` blocks of `block`
/// channels; the last block is zero-padded when needed.
pub fn split_blocks(x: &Tensor, block: usize) -> Result<Vec<Tensor>> {
    let (b, c, h, w) = x.dims4()?;
    let n = num_blocks(c, block);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * block;
        let width = block.min(c - start);
        let mut part = x.narrow(1, start, width)?;
        if width < block {
            let pad = Tensor::zeros((b, block - width, h, w), x.dtype(), x.device())?;
            part = Tensor::cat(&[&part, &pad], 1)?;
        }
        out.push(part);
    }
    Ok(out)
}

/// Inverse of [`split_blocks`]: concatenate and strip padding.
pub fn reassemble(blocks: &[Tensor], channels: usize) -> Result<Tensor> {
    let refs: Vec<&Tensor> = blocks.iter().collect();
    Ok(Tensor::cat(&refs, 1)?.narrow(1, 0, channels)?)
}

/// Spatial mean of the element-wise block sum: `(b, block)`.
pub fn channel_descriptor(blocks: &[Tensor]) -> Result<Tensor> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Shape("channel descriptor needs at least one block".into()))?;
    let mut sum = first.clone();
    for b in &blocks[1..] {
        sum = (sum + b)?;
    }
    Ok(sum.mean((2, 3))?)
}

/// Scale block `i` by `attention[:, i, :]` broadcast over space.
pub fn apply_attention(blocks: &[Tensor], attention: &Tensor) -> Result<Vec<Tensor>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let a = attention.narrow(1, i, 1)?.squeeze(1)?.unsqueeze(2)?.unsqueeze(3)?;
            Ok(b.broadcast_mul(&a)?)
        })
        .collect()
}

pub struct Msaf {
    cfg: MsafConfig,
    channels: Vec<usize>,
    joint: Linear,
    norm: BatchNorm1d,
    /// `attention[m][i]` maps `Z` to logits for block `i` of modality `m`.
    attention: Vec<Vec<Linear>>,
}

pub struct FusionOutput {
    pub fused: Tensor,
    /// Per modality, `(b, blocks, C)` softmax weights.
    pub attention: Vec<Tensor>,
    pub joint: Tensor,
}

impl Msaf {
    /// `channels` lists the channel count of each modality; modality 0 is the
    /// one whose re-weighted features are returned.
    pub fn new(pb: &ParamBuilder, cfg: MsafConfig, channels: &[usize]) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.block_channels;
        let cr = cfg.reduced();
        let joint = Linear::new(&pb.pp("joint"), c, cr, true)?;
        let norm = BatchNorm1d::new(&pb.pp("joint_norm"), cr)?;
        let attention = channels
            .iter()
            .enumerate()
            .map(|(m, &cm)| {
                (0..num_blocks(cm, c))
                    .map(|i| Linear::new(&pb.pp(format!("attn{m}.block{i}")), cr, c, false))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            channels: channels.to_vec(),
            joint,
            norm,
            attention,
        })
    }

    pub fn config(&self) -> MsafConfig {
        self.cfg
    }

    pub fn joint_layer(&self) -> &Linear {
        &self.joint
    }

    pub fn attention_layers(&self) -> &[Vec<Linear>] {
        &self.attention
    }

    /// `Z = ReLU(BN(W_Z (sum_m D_m) + b_Z))`.
    pub fn joint_projection(&self, descriptors: &[Tensor], mode: Mode) -> Result<Tensor> {
        let mut g: Option<Tensor> = None;
        for d in descriptors {
            if d.dim(D::Minus1)? != self.cfg.block_channels {
                return Err(Error::Shape(format!(
                    "descriptor length {} != block width {}",
                    d.dim(D::Minus1)?,
                    self.cfg.block_channels
                )));
            }
            g = Some(match g {
                None => d.clone(),
                Some(acc) => (acc + d)?,
            });
        }
        let g = g.ok_or_else(|| Error::Shape("no descriptors".into()))?;
        let z = self.joint.forward(&g)?;
        Ok(self.norm.forward(&z, mode)?.relu()?)
    }

    pub fn forward_detailed(&self, modalities: &[&Tensor], mode: Mode) -> Result<FusionOutput> {
        if modalities.len() != self.channels.len() {
            return Err(Error::Shape(format!(
                "expected {} modalities, got {}",
                self.channels.len(),
                modalities.len()
            )));
        }
        let (b, _, h, w) = modalities[0].dims4()?;
        for (m, x) in modalities.iter().enumerate() {
            let (xb, xc, xh, xw) = x.dims4()?;
            if (xb, xh, xw) != (b, h, w) || xc != self.channels[m] {
                return Err(Error::Shape(format!(
                    "modality {m} has shape {:?}; expected ({b}, {}, {h}, {w})",
                    x.dims(),
                    self.channels[m]
                )));
            }
        }
        let blocks = modalities
            .iter()
            .map(|x| split_blocks(x, self.cfg.block_channels))
            .collect::<Result<Vec<_>>>()?;
        let descriptors = blocks
            .iter()
            .map(|bl| channel_descriptor(bl))
            .collect::<Result<Vec<_>>>()?;
        let z = self.joint_projection(&descriptors, mode)?;
        let attention = self
            .attention
            .iter()
            .map(|layers| {
                let logits = layers.iter().map(|l| l.forward(&z)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Tensor> = logits.iter().collect();
                softmax(&Tensor::stack(&refs, 1)?, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let weighted = apply_attention(&blocks[0], &attention[0])?;
        let fused = reassemble(&weighted, self.channels[0])?;
        Ok(FusionOutput {
            fused,
            attention,
            joint: z,
        })
    }

    /// Fuse backbone features with the graph map; output has the backbone's shape.
    pub fn fuse(&self, backbone: &Tensor, graph_map: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_detailed(&[backbone, graph_map], mode)?.fused)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::{DType, Device};

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn block_counts() {
        assert_eq!(split_blocks(&ramp(&[1, 64, 2, 2]), 64).unwrap().len(), 1);
        assert_eq!(split_blocks(&ramp(&[1, 64, 2, 2]), 16).unwrap().len(), 4);
        let b = split_blocks(&ramp(&[1, 10, 2, 2]), 4).unwrap();
        assert_eq!(b.len(), 3);
        let pad = b[2].narrow(1, 2, 2).unwrap();
        assert_eq!(pad.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn split_reassemble_identity() {
        let x = ramp(&[2, 10, 3, 3]);
        let blocks = split_blocks(&x, 4).unwrap();
        let ones = Tensor::ones((2, blocks.len(), 4), DType::F64, &Device::Cpu).unwrap();
        let y = reassemble(&apply_attention(&blocks, &ones).unwrap(), 10).unwrap();
        let diff = (x - y)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn descriptor_of_constants() {
        let a = Tensor::full(0.25f64, (1, 4, 3, 3), &Device::Cpu).unwrap();
        let b = Tensor::full(1.5f64, (1, 4, 3, 3), &Device::Cpu).unwrap();
        let d1 = channel_descriptor(std::slice::from_ref(&a)).unwrap().to_vec2::<f64>().unwrap();
        assert!(d1[0].iter().all(|v| (v - 0.25).abs() < 1e-15));
        let d2 = channel_descriptor(&[a, b]).unwrap().to_vec2::<f64>().unwrap();
        assert!(d2[0].iter().all(|v| (v - 1.75).abs() < 1e-15));
        let z = channel_descriptor(&[Tensor::zeros((1, 4, 2, 2), DType::F64, &Device::Cpu).unwrap()]).unwrap();
        assert_eq!(z.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn joint_width_and_zero_input() {
        let store = ParamStore::new(DType::F64, 1);
        let cfg = MsafConfig {
            block_channels: 64,
            reduction: 4,
        };
        let msaf = Msaf::new(&store.root(), cfg, &[64, 64]).unwrap();
        let g = Tensor::zeros((1, 64), DType::F64, &Device::Cpu).unwrap();
        let z = msaf.joint_projection(std::slice::from_ref(&g), Mode::Eval).unwrap();
        assert_eq!(z.dims(), &[1, 16]);
        assert_eq!(z.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
        assert!(msaf
            .joint_projection(&[Tensor::zeros((1, 8), DType::F64, &Device::Cpu).unwrap()], Mode::Eval)
            .is_err());
    }

    #[test]
    fn single_modality_descriptor_is_g() {
        let store = ParamStore::new(DType::F64, 2);
        let cfg = MsafConfig {
            block_channels: 4,
            reduction: 2,
        };
        let msaf = Msaf::new(&store.root(), cfg, &[8]).unwrap();
        let d = ramp(&[1, 4]);
        let z1 = msaf.joint_projection(std::slice::from_ref(&d), Mode::Eval).unwrap();
        let manual = msaf.joint_layer().forward(&d).unwrap();
        let manual = (manual / (1.0 + crate::nn::NORM_EPS).sqrt()).unwrap().relu().unwrap();
        let diff = (z1 - manual)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn attention_normalized_and_single_block_passthrough() {
        let store = ParamStore::new(DType::F64, 3);
        let cfg = MsafConfig {
            block_channels: 8,
            reduction: 2,
        };
        let msaf = Msaf::new(&store.root(), cfg, &[8, 24]).unwrap();
        let x = ramp(&[2, 8, 4, 4]);
        let g = ramp(&[2, 24, 4, 4]);
        let out = msaf.forward_detailed(&[&x, &g], Mode::Eval).unwrap();
        for a in &out.attention {
            let s = a.sum(1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-6));
        }
        let diff = (&out.fused - &x)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn equal_logits_give_uniform_attention() {
        let store = ParamStore::new(DType::F64, 4);
        let cfg = MsafConfig {
            block_channels: 4,
            reduction: 2,
        };
        let msaf = Msaf::new(&store.root(), cfg, &[12, 4]).unwrap();
        let w0 = msaf.attention_layers()[0][0].weight.as_tensor().copy().unwrap();
        for l in &msaf.attention_layers()[0] {
            l.weight.set(&w0).unwrap();
        }
        let block = ramp(&[1, 4, 3, 3]);
        let x = Tensor::cat(&[&block, &block, &block], 1).unwrap();
        let g = ramp(&[1, 4, 3, 3]);
        let out = msaf.forward_detailed(&[&x, &g], Mode::Eval).unwrap();
        for v in out.attention[0].flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let store = ParamStore::new(DType::F64, 5);
        let cfg = MsafConfig {
            block_channels: 4,
            reduction: 2,
        };
        let msaf = Msaf::new(&store.root(), cfg, &[4, 4]).unwrap();
        let r = msaf.fuse(&ramp(&[1, 4, 4, 4]), &ramp(&[1, 4, 3, 4]), Mode::Eval);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
