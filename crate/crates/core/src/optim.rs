//! Adaptive-moment gradient descent.

use crate::params::{GradBuffer, ParamStore};
use crate::tensor::Precision;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |_| store.iter().map(|(_, e)| vec![0.0; e.value.numel()]).collect();
        Adam { cfg, m: zeros(0), v: zeros(1), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from `grads` (already averaged over the batch).
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer, precision: Precision) {
        self.t += 1;
        let c = self.cfg;
        let scale = match c.clip_norm {
            Some(max) => {
                let n = grads.global_norm();
                if n > max { max / n } else { 1.0 }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.entry(id).trainable {
                continue;
            }
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let w = store.get_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g[k] * scale;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] = precision.round(w[k] - c.lr * mh / (vh.sqrt() + c.eps));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;
    use crate::Tape;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![3], vec![3.0, -2.0, 1.0]).unwrap(), true);
        let mut opt = Adam::new(&store, AdamConfig { lr: 0.05, clip_norm: None, ..Default::default() });
        for _ in 0..500 {
            let mut tape = Tape::with_params(&store);
            let w = tape.param(id);
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq).unwrap();
            let g = tape.backward(loss).unwrap();
            let mut buf = GradBuffer::zeros_like(&store);
            g.accumulate_into(&mut buf);
            drop(tape);
            opt.step(&mut store, &buf, Precision::F64);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
