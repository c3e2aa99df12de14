//! Task-conditioned decoder with gated spatial attention, and prediction heads.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln_self: LayerNorm,
    pub text_attn: MultiHeadAttention,
    pub ln_text: LayerNorm,
    pub spatial_attn: MultiHeadAttention,
    pub gate: Linear,
    pub ln_spatial: LayerNorm,
    pub ff: FeedForward,
    pub ln_ff: LayerNorm,
}

pub struct Decoder {
    pub tasks: ParamId,
    pub n_tasks: usize,
    pub layers: Vec<DecoderLayer>,
}

pub struct DecodeOutput {
    /// The single output token, `1 × D`.
    pub h: Var,
    /// Gate activations per layer (absent when the spatial cache is empty).
    pub gates: Vec<Var>,
    pub text_weights: Vec<Vec<Var>>,
    pub spatial_weights: Vec<Vec<Var>>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, dim: usize, heads: usize, layers: usize, n_tasks: usize) -> Result<Self> {
        let tasks = store.add("decoder.tasks", init::normal(rng, &[n_tasks, dim], 1.0), true);
        let layers = (0..layers)
            .map(|l| {
                let n = |s: &str| format!("decoder.{l}.{s}");
                Ok(DecoderLayer {
                    self_attn: MultiHeadAttention::new(store, rng, &n("self"), dim, heads)?,
                    ln_self: LayerNorm::new(store, &n("ln_self"), dim),
                    text_attn: MultiHeadAttention::new(store, rng, &n("text"), dim, heads)?,
                    ln_text: LayerNorm::new(store, &n("ln_text"), dim),
                    spatial_attn: MultiHeadAttention::new(store, rng, &n("spatial"), dim, heads)?,
                    gate: Linear::new(store, rng, &n("gate"), dim, dim, true),
                    ln_spatial: LayerNorm::new(store, &n("ln_spatial"), dim),
                    ff: FeedForward::new(store, rng, &n("ff"), dim, Activation::Gelu),
                    ln_ff: LayerNorm::new(store, &n("ln_ff"), dim),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Decoder { tasks, n_tasks, layers })
    }

    pub fn decode(&self, tape: &mut Tape<'_>, task_id: usize, z_t: Var, z_p: Var) -> Result<DecodeOutput> {
        self.decode_inner(tape, task_id, z_t, z_p, true)
    }

    /// Same as [`Decoder::decode`] with every gate fixed at 1.
    pub fn decode_ungated(&self, tape: &mut Tape<'_>, task_id: usize, z_t: Var, z_p: Var) -> Result<DecodeOutput> {
        self.decode_inner(tape, task_id, z_t, z_p, false)
    }

    fn decode_inner(&self, tape: &mut Tape<'_>, task_id: usize, z_t: Var, z_p: Var, gated: bool) -> Result<DecodeOutput> {
        if task_id >= self.n_tasks {
            return Err(Error::Index(format!("unknown task id {task_id} (have {})", self.n_tasks)));
        }
        let table = tape.param(self.tasks);
        let mut x = tape.embedding(table, &[task_id])?;
        let has_t = tape.shape(z_t)[0] > 0;
        let has_p = tape.shape(z_p)[0] > 0;
        let mut out = DecodeOutput { h: x, gates: Vec::new(), text_weights: Vec::new(), spatial_weights: Vec::new() };
        for l in &self.layers {
            let a = l.self_attn.forward(tape, x, x, None)?;
            let r = tape.add(x, a.out)?;
            x = l.ln_self.forward(tape, r)?;
            if has_t {
                let a = l.text_attn.forward(tape, x, z_t, None)?;
                let r = tape.add(x, a.out)?;
                x = l.ln_text.forward(tape, r)?;
                out.text_weights.push(a.weights);
            }
            if has_p {
                let a = l.spatial_attn.forward(tape, x, z_p, None)?;
                let scaled = if gated {
                    let g = l.gate.forward(tape, x)?;
                    let g = tape.sigmoid(g)?;
                    out.gates.push(g);
                    tape.mul(a.out, g)?
                } else {
                    a.out
                };
                let r = tape.add(x, scaled)?;
                x = l.ln_spatial.forward(tape, r)?;
                out.spatial_weights.push(a.weights);
            }
            let f = l.ff.forward(tape, x)?;
            let r = tape.add(x, f)?;
            x = l.ln_ff.forward(tape, r)?;
        }
        out.h = x;
        Ok(out)
    }
}

/// `concat(H, Z_s[0] or 0) → Dense(2D→D) → ReLU → Dense(D→classes)`.
pub struct ClassifierHead {
    pub hidden: Linear,
    pub out: Linear,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, classes: usize) -> Self {
        let head = ClassifierHead {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), 2 * dim, dim, true),
            out: Linear::new(store, rng, &format!("{name}.out"), dim, classes, true),
            classes,
        };
        for id in head.hidden.params().into_iter().chain(head.out.params()) {
            store.mark_head(id);
        }
        head
    }

    pub fn classify(&self, tape: &mut Tape<'_>, h: Var, z_s: Var) -> Result<Var> {
        let dim = tape.shape(h)[1];
        let slot = if tape.shape(z_s)[0] > 0 {
            tape.select_rows(z_s, &[0])?
        } else {
            tape.constant(Tensor::zeros(&[1, dim]))
        };
        let x = tape.concat(&[h, slot], 1)?;
        let x = self.hidden.forward(tape, x)?;
        let x = tape.relu(x)?;
        self.out.forward(tape, x)
    }
}

pub const GEN_STAGES: usize = 4;
const GEN_BASE_CHANNELS: usize = 32;

/// Linear seed followed by four stride-2 transposed convolutions and `tanh`.
pub struct GeneratorHead {
    pub seed: Linear,
    pub stages: Vec<(ParamId, ParamId)>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GeneratorHead {
    pub fn channel_plan(channels: usize) -> [usize; GEN_STAGES + 1] {
        [GEN_BASE_CHANNELS, 32, 16, 8, channels]
    }

    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        let f = 1 << GEN_STAGES;
        if height % f != 0 || width % f != 0 || height == 0 || width == 0 {
            return Err(Error::Config(format!("generated frame {height}x{width} must be a positive multiple of {f}")));
        }
        let plan = Self::channel_plan(channels);
        let seed = Linear::new(store, rng, &format!("{name}.seed"), dim, plan[0] * (height / f) * (width / f), true);
        let mut ids = seed.params();
        let stages = (0..GEN_STAGES)
            .map(|s| {
                let (cin, cout) = (plan[s], plan[s + 1]);
                let bound = (6.0 / ((cin + cout) * 4) as f64).sqrt();
                let w = store.add(format!("{name}.deconv{s}.w"), init::uniform(rng, &[cin, cout, 4, 4], bound), true);
                let b = store.add(format!("{name}.deconv{s}.b"), Tensor::zeros(&[cout]), true);
                ids.extend([w, b]);
                (w, b)
            })
            .collect();
        for id in ids {
            store.mark_head(id);
        }
        Ok(GeneratorHead { seed, stages, height, width, channels })
    }

    /// Returns a `[C, H, W]` frame in `[-1, 1]`.
    pub fn generate(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let f = 1 << GEN_STAGES;
        let x = self.seed.forward(tape, h)?;
        let x = tape.relu(x)?;
        let mut x = tape.reshape(x, &[GEN_BASE_CHANNELS, self.height / f, self.width / f])?;
        for (s, &(w, b)) in self.stages.iter().enumerate() {
            let w = tape.param(w);
            let b = tape.param(b);
            x = tape.conv_transpose2d(x, w, Some(b), ConvGeom { stride: 2, pad: 1 })?;
            x = if s + 1 < GEN_STAGES { tape.relu(x)? } else { tape.tanh(x)? };
        }
        Ok(x)
    }
}
