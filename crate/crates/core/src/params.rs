//! Named parameter storage shared by every learnable module.
//!
//! Each parameter is a [`Var`] registered under a dotted path such as
//! `backbone.rrdb.0.rdb.1.conv3.weight`. Modules keep clones of their vars
//! (clones share storage), so optimizer updates and checkpoint restores made
//! through the store are visible to the modules immediately.
//!
//! Initial values are drawn from a ChaCha stream seeded by the store seed and
//! a hash of the parameter name. The same seed therefore yields the same value
//! for a given name regardless of which other parameters exist, which keeps
//! shared weights identical across ablation variants.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct ParamEntry {
    pub var: Var,
    /// Buffers (batch-norm running statistics) are stored but never optimized.
    pub trainable: bool,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<BTreeMap<String, ParamEntry>>>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(BTreeMap::new())),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn lock(&self) -> MutexGuard<'_, BTreeMap<String, ParamEntry>> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn root(&self) -> ParamBuilder {
        ParamBuilder {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.lock().get(name).map(|e| e.var.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.lock().keys().cloned().collect()
    }

    /// Trainable parameters in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.lock()
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, e)| (n.clone(), e.var.clone()))
            .collect()
    }

    pub fn entries(&self) -> Vec<(String, ParamEntry)> {
        self.lock().iter().map(|(n, e)| (n.clone(), e.clone())).collect()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.lock()
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Overwrite a registered parameter, checking its shape.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    fn register(&self, name: String, tensor: Tensor, trainable: bool) -> Result<Var> {
        let mut map = self.lock();
        if let Some(existing) = map.get(&name) {
            return Ok(existing.var.clone());
        }
        let var = Var::from_tensor(&tensor)?;
        map.insert(
            name,
            ParamEntry {
                var: var.clone(),
                trainable,
            },
        );
        Ok(var)
    }
}

/// 64-bit FNV-1a, used to derive per-parameter RNG streams from names.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

/// Prefix-scoped view of a [`ParamStore`] used while constructing modules.
#[derive(Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
}

impl ParamBuilder {
    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform values in `[-bound, bound]`.
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let path = self.path(name);
        let n: usize = shape.iter().product();
        let mut rng = rng_for(self.store.seed, &path);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0) * bound).collect();
        let t = Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        self.store.register(path, t, true)
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let path = self.path(name);
        let t = Tensor::full(value, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        self.store.register(path, t, true)
    }

    /// Non-trainable buffer filled with `value`.
    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let path = self.path(name);
        let t = Tensor::full(value, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        self.store.register(path, t, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_name_same_values_across_stores() {
        let a = ParamStore::new(DType::F64, 3);
        let b = ParamStore::new(DType::F64, 3);
        b.root().uniform("other", &[5], 1.0).unwrap();
        let va = a.root().pp("m").uniform("w", &[4], 0.5).unwrap();
        let vb = b.root().pp("m").uniform("w", &[4], 0.5).unwrap();
        let xa = va.as_tensor().to_vec1::<f64>().unwrap();
        let xb = vb.as_tensor().to_vec1::<f64>().unwrap();
        assert_eq!(xa, xb);
        assert!(xa.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn buffers_are_not_trainable() {
        let s = ParamStore::new(DType::F32, 0);
        s.root().buffer("running_mean", &[3], 0.0).unwrap();
        s.root().constant("gamma", &[3], 1.0).unwrap();
        assert_eq!(s.num_trainable(), 3);
        assert_eq!(s.names().len(), 2);
    }

    #[test]
    fn assign_checks_shape() {
        let s = ParamStore::new(DType::F32, 0);
        s.root().constant("w", &[2, 2], 0.0).unwrap();
        let bad = Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(s.assign("w", &bad), Err(Error::Shape(_))));
        assert!(matches!(s.assign("nope", &bad), Err(Error::MissingParam(_))));
    }
}
