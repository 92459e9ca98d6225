//! Small layer primitives built directly on candle tensor ops.

use candle_core::{Tensor, Var};

use crate::error::Result;
use crate::params::ParamBuilder;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// Whether batch-norm layers use and update batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

/// Softmax along `dim`, max-shifted.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?;
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

/// 3x3 (or 1x1) stride-1 convolution with "same" padding.
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    padding: usize,
}

impl Conv2d {
    /// Weights uniform with variance `gain^2 / fan_in`; zero bias.
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, k: usize, gain: f64) -> Result<Self> {
        let fan_in = (c_in * k * k) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        Ok(Self {
            weight: pb.uniform("weight", &[c_out, c_in, k, k], bound)?,
            bias: pb.constant("bias", &[c_out], 0.0)?,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, 1, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Per-sample, per-channel standardization over the spatial axes plus affine.
pub struct InstanceNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl InstanceNorm {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.constant("gamma", &[channels], 1.0)?,
            beta: pb.constant("beta", &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = standardize(x)?;
        let g = self.gamma.as_tensor().reshape((1, (), 1, 1))?;
        let b = self.beta.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

/// Zero-mean, unit-variance per `(sample, channel)`. A 1x1 spatial extent has
/// no spread to normalize, so such input is returned unchanged.
pub fn standardize(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h * w < 2 {
        return Ok(x.clone());
    }
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    /// `weight` is `(out, in)`.
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, bias: bool) -> Result<Self> {
        let bound = (3.0 / c_in as f64).sqrt();
        Ok(Self {
            weight: pb.uniform("weight", &[c_out, c_in], bound)?,
            bias: if bias {
                Some(pb.constant("bias", &[c_out], 0.0)?)
            } else {
                None
            },
        })
    }

    /// `(batch, in)` to `(batch, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b.as_tensor())?),
            None => Ok(y),
        }
    }
}

/// Batch normalization over `(batch, features)`.
///
/// Training mode with a batch of at least two uses batch statistics and
/// updates the running buffers; otherwise the running statistics are used.
pub struct BatchNorm1d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    momentum: f64,
}

impl BatchNorm1d {
    pub fn new(pb: &ParamBuilder, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.constant("gamma", &[features], 1.0)?,
            beta: pb.constant("beta", &[features], 0.0)?,
            running_mean: pb.buffer("running_mean", &[features], 0.0)?,
            running_var: pb.buffer("running_var", &[features], 1.0)?,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = x.dim(0)?;
        let (mean, var) = if mode == Mode::Train && n >= 2 {
            let mean = x.mean_keepdim(0)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
            let m = self.momentum;
            let unbiased = (var.detach() * (n as f64 / (n as f64 - 1.0)))?.squeeze(0)?;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().squeeze(0)? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().unsqueeze(0)?,
                self.running_var.as_tensor().unsqueeze(0)?,
            )
        };
        let y = x.broadcast_sub(&mean)?.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma.as_tensor().unsqueeze(0)?)?
            .broadcast_add(&self.beta.as_tensor().unsqueeze(0)?)?)
    }
}
