//! Layers shared by the peripherals, the fusion encoder and the decoder.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.w"), init::xavier(rng, in_dim, out_dim), true);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]), true));
        Linear { w, b, in_dim, out_dim }
    }

    /// A square map initialised to the identity, without bias.
    pub fn identity(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), init::identity(dim), true);
        Linear { w, b: None, in_dim: dim, out_dim: dim }
    }

    /// `x[n, in] → [n, out]`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), true);
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Position-wise `D → 4D → D`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, act: Activation) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, 4 * dim, true),
            down: Linear::new(store, rng, &format!("{name}.down"), 4 * dim, dim, true),
            act,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, x)?;
        let h = self.act.apply(tape, h)?;
        self.down.forward(tape, h)
    }
}

/// Scaled dot-product attention split across `heads`. The key projection
/// has no bias: softmax is invariant to it.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Output of one attention call: the `T_dst × D` result and one
/// `T_dst × T_src` weight matrix per head.
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{name}: dimension {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim, false),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim, true),
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim, true),
            heads,
            dim,
        })
    }

    /// Queries from `dst`, keys and values from `src`. Source entries whose
    /// `mask` flag is `false` receive zero weight.
    pub fn forward(&self, tape: &mut Tape<'_>, dst: Var, src: Var, mask: Option<&[bool]>) -> Result<AttentionOutput> {
        let t_src = tape.shape(src)[0];
        if t_src == 0 {
            return Err(Error::EmptyInput("attention over an empty source".into()));
        }
        let q = self.q.forward(tape, dst)?;
        let k = self.k.forward(tape, src)?;
        let v = self.v.forward(tape, src)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 1, h * dh, dh)?;
            let kh = tape.narrow(k, 1, h * dh, dh)?;
            let vh = tape.narrow(v, 1, h * dh, dh)?;
            let logits = tape.matmul_t(qh, kh)?;
            let logits = tape.scale(logits, scale)?;
            let w = tape.softmax(logits, mask)?;
            outs.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let merged = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        let out = self.o.forward(tape, merged)?;
        Ok(AttentionOutput { out, weights })
    }
}

/// Post-norm transformer block: `x ← LN(x + Attn(x, src))`, `x ← LN(x + FF(x))`.
/// With `src = None` the block is self-attention.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    pub ln_attn: LayerNorm,
    pub ff: FeedForward,
    pub ln_ff: LayerNorm,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(AttentionBlock {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads)?,
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), dim, Activation::Gelu),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, src: Option<Var>, mask: Option<&[bool]>) -> Result<AttentionOutput> {
        let a = self.attn.forward(tape, x, src.unwrap_or(x), mask)?;
        let r = tape.add(x, a.out)?;
        let x = self.ln_attn.forward(tape, r)?;
        let f = self.ff.forward(tape, x)?;
        let r = tape.add(x, f)?;
        let out = self.ln_ff.forward(tape, r)?;
        Ok(AttentionOutput { out, weights: a.weights })
    }
}

/// A stack of attention blocks. For cross-attention the source stays fixed
/// while queries come from the evolving destination stream.
#[derive(Clone, Debug)]
pub struct AttentionStack {
    pub blocks: Vec<AttentionBlock>,
    pub heads: usize,
}

impl AttentionStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize, layers: usize) -> Result<Self> {
        let blocks = (0..layers)
            .map(|l| AttentionBlock::new(store, rng, &format!("{name}.{l}"), dim, heads))
            .collect::<Result<_>>()?;
        Ok(AttentionStack { blocks, heads })
    }

    /// Returns the final stream and each layer's per-head weights.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, src: Option<Var>, mask: Option<&[bool]>) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut x = x;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let o = b.forward(tape, x, src, mask)?;
            x = o.out;
            maps.push(o.weights);
        }
        Ok((x, maps))
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }
}
