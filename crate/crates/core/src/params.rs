//! Named parameter storage, initialisation and gradient buffers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Prediction-head parameters are excluded from the reported size when requested.
    pub head: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable, head: false });
        ParamId(self.entries.len() - 1)
    }

    pub fn mark_head(&mut self, id: ParamId) {
        self.entries[id.0].head = true;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Count of trainable scalars, optionally leaving out prediction heads.
    pub fn count_trainable(&self, exclude_heads: bool) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && !(exclude_heads && e.head))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn round_all(&mut self, p: crate::tensor::Precision) {
        for e in &mut self.entries {
            p.round_slice(e.value.data_mut());
        }
    }

    /// Copies values from `other` by name; every name in `self` must exist there
    /// with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .find(&e.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", e.name)))?;
            let t = other.get(src);
            if t.shape() != e.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?} in checkpoint but {:?} in model",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t.clone();
        }
        Ok(())
    }
}

/// Parameter initialisers. All draw from the caller's seeded generator.
pub mod init {
    use super::*;

    pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
    }

    /// Glorot/Xavier uniform for an `fan_in × fan_out` weight.
    pub fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        uniform(rng, &[fan_in, fan_out], bound)
    }

    pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
        use rand_distr::{Distribution, Normal};
        let n = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| n.sample(rng))
    }

    pub fn identity(n: usize) -> Tensor {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer { grads: store.entries.iter().map(|e| vec![0.0; e.value.numel()]).collect() }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.grads[id.0].iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            for v in g {
                *v *= s;
            }
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}
