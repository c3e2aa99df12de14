//! Cross-cache attention between the three caches, followed by
//! per-cache self-attention.

use std::fmt;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::cache::{Cache, Caches};
use crate::error::{Error, Result};
use crate::nn::{AttentionStack, Linear};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaOrder {
    /// Self-attention after cross-cache attention.
    Late,
    /// Self-attention before cross-cache attention (ablation).
    Early,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Full,
    /// Caches are encoded independently; no cross-cache attention.
    NoCca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameExclusion {
    /// Frame pools take no part in cross-cache attention at all.
    Both,
    /// Frame pools are hidden only when the temporal cache is the source.
    Source,
    Off,
}

macro_rules! keyword_enum {
    ($t:ty { $($v:ident => $s:literal $(| $alt:literal)*),+ $(,)? }) => {
        impl $t {
            pub fn parse(s: &str) -> Option<Self> {
                match s { $($s $(| $alt)* => Some(Self::$v),)+ _ => None }
            }
            pub fn name(self) -> &'static str {
                match self { $(Self::$v => $s,)+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

keyword_enum!(SaOrder { Late => "late", Early => "early" });
keyword_enum!(FusionMode { Full => "cca", NoCca => "none" });
keyword_enum!(FrameExclusion { Both => "on" | "both", Source => "source", Off => "off" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheKind {
    S,
    T,
    P,
}

impl CacheKind {
    pub const ALL: [CacheKind; 3] = [CacheKind::S, CacheKind::T, CacheKind::P];

    pub fn letter(self) -> char {
        match self {
            CacheKind::S => 's',
            CacheKind::T => 't',
            CacheKind::P => 'p',
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

/// Directed `(destination, source)` pairs; consecutive pairs share a destination.
pub const STREAMS: [(CacheKind, CacheKind); 6] = [
    (CacheKind::S, CacheKind::P),
    (CacheKind::S, CacheKind::T),
    (CacheKind::T, CacheKind::P),
    (CacheKind::T, CacheKind::S),
    (CacheKind::P, CacheKind::S),
    (CacheKind::P, CacheKind::T),
];

pub fn stream_name(dst: CacheKind, src: CacheKind) -> String {
    format!("{}_{}", dst.letter(), src.letter())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub dim: usize,
    pub cca_layers: usize,
    pub cca_heads: usize,
    pub sa_layers: usize,
    pub sa_heads: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    pub sa_order: SaOrder,
    pub mode: FusionMode,
    pub frame_exclusion: FrameExclusion,
}

/// A retained attention matrix, `T_dst × T_src`.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub stream: String,
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

pub struct FusionState {
    /// `N × 2D` concatenated cross-cache outputs, indexed s, t, p; `None` for
    /// an empty destination or without cross-cache attention.
    pub y_cat: [Option<Var>; 3],
    /// Projected streams with frame pools rejoined, `N × D`.
    pub y: [Var; 3],
    pub z: [Var; 3],
    /// Raw output of every directed cross-cache term that ran.
    pub cca_outputs: Vec<(String, Var)>,
    pub maps: Vec<AttentionMap>,
}

impl FusionState {
    pub fn z_s(&self) -> Var {
        self.z[0]
    }
    pub fn z_t(&self) -> Var {
        self.z[1]
    }
    pub fn z_p(&self) -> Var {
        self.z[2]
    }

    pub fn export_attention_map(&self, stream: &str, layer: usize, head: usize) -> Result<&Tensor> {
        self.maps
            .iter()
            .find(|m| m.stream == stream && m.layer == layer && m.head == head)
            .map(|m| &m.weights)
            .ok_or_else(|| {
                Error::Index(format!("no retained attention map for stream {stream}, layer {layer}, head {head}"))
            })
    }
}

pub struct FusionEncoder {
    pub cfg: FusionConfig,
    pub cca: Vec<AttentionStack>,
    pub fallback: Vec<Linear>,
    pub stream_proj: Vec<Linear>,
    pub sa: Vec<AttentionStack>,
}

impl FusionEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: FusionConfig) -> Result<Self> {
        let d = cfg.dim;
        let (mut cca, mut fallback, mut stream_proj) = (Vec::new(), Vec::new(), Vec::new());
        if cfg.mode == FusionMode::Full {
            for (dst, src) in STREAMS {
                let name = stream_name(dst, src);
                cca.push(AttentionStack::new(store, rng, &format!("cca.{name}"), d, cfg.cca_heads, cfg.cca_layers)?);
                fallback.push(Linear::identity(store, &format!("cca.{name}.fallback"), d));
            }
            for k in CacheKind::ALL {
                stream_proj.push(Linear::new(store, rng, &format!("fuse.{}", k.letter()), 2 * d, d, true));
            }
        }
        let mut sa = Vec::new();
        for k in CacheKind::ALL {
            let (layers, heads) = match k {
                CacheKind::T => (cfg.temporal_layers, cfg.temporal_heads),
                _ => (cfg.sa_layers, cfg.sa_heads),
            };
            sa.push(AttentionStack::new(store, rng, &format!("sa.{}", k.letter()), d, heads, layers)?);
        }
        Ok(FusionEncoder { cfg, cca, fallback, stream_proj, sa })
    }

    fn self_attend(&self, tape: &mut Tape<'_>, kind: CacheKind, x: Var) -> Result<Var> {
        if tape.shape(x)[0] == 0 {
            return Ok(x);
        }
        Ok(self.sa[kind.idx()].forward(tape, x, None, None)?.0)
    }

    pub fn fuse(&self, tape: &mut Tape<'_>, caches: &Caches, retain: bool) -> Result<FusionState> {
        let cs: [&Cache; 3] = [&caches.s, &caches.t, &caches.p];
        if cs.iter().all(|c| c.is_empty()) {
            return Err(Error::EmptyInput("all three caches are empty".into()));
        }
        let mut x = [cs[0].entries, cs[1].entries, cs[2].entries];
        if self.cfg.mode == FusionMode::NoCca {
            let mut z = x;
            for k in CacheKind::ALL {
                z[k.idx()] = self.self_attend(tape, k, x[k.idx()])?;
            }
            return Ok(FusionState { y_cat: [None; 3], y: x, z, cca_outputs: Vec::new(), maps: Vec::new() });
        }
        if self.cfg.sa_order == SaOrder::Early {
            for k in CacheKind::ALL {
                x[k.idx()] = self.self_attend(tape, k, x[k.idx()])?;
            }
        }

        let flags = cs[1].frame_flags();
        let text_rows: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
        let frame_rows: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        let restrict = |tape: &mut Tape<'_>, v: Var| -> Result<Var> {
            if frame_rows.is_empty() { Ok(v) } else { tape.select_rows(v, &text_rows) }
        };
        let mut src_view = x;
        let mut dst_view = x;
        if self.cfg.frame_exclusion != FrameExclusion::Off {
            src_view[1] = restrict(tape, x[1])?;
        }
        if self.cfg.frame_exclusion == FrameExclusion::Both {
            dst_view[1] = restrict(tape, x[1])?;
        }

        let mut y_cat = [None; 3];
        let mut y = x;
        let mut cca_outputs = Vec::new();
        let mut maps = Vec::new();
        for (pair, kind) in CacheKind::ALL.into_iter().enumerate() {
            let dst = dst_view[kind.idx()];
            if tape.shape(dst)[0] == 0 {
                continue;
            }
            let mut halves = Vec::with_capacity(2);
            for s in 2 * pair..2 * pair + 2 {
                let (_, src_kind) = STREAMS[s];
                let src = src_view[src_kind.idx()];
                let name = stream_name(kind, src_kind);
                let out = if tape.shape(src)[0] == 0 {
                    self.fallback[s].forward(tape, dst)?
                } else {
                    let (out, layer_maps) = self.cca[s].forward(tape, dst, Some(src), None)?;
                    if retain {
                        for (layer, heads) in layer_maps.iter().enumerate() {
                            for (head, &w) in heads.iter().enumerate() {
                                maps.push(AttentionMap { stream: name.clone(), layer, head, weights: tape.tensor(w) });
                            }
                        }
                    }
                    cca_outputs.push((name, out));
                    out
                };
                halves.push(out);
            }
            let cat = tape.concat(&halves, 1)?;
            y_cat[kind.idx()] = Some(cat);
            let proj = self.stream_proj[kind.idx()].forward(tape, cat)?;
            y[kind.idx()] = if kind == CacheKind::T && dst != x[1] {
                rejoin(tape, proj, x[1], &text_rows, &frame_rows)?
            } else {
                proj
            };
        }

        let mut z = y;
        if self.cfg.sa_order == SaOrder::Late {
            for k in CacheKind::ALL {
                z[k.idx()] = self.self_attend(tape, k, y[k.idx()])?;
            }
        }
        Ok(FusionState { y_cat, y, z, cca_outputs, maps })
    }
}

/// Interleaves fused text rows with the untouched frame rows of `x_t` in original order.
fn rejoin(tape: &mut Tape<'_>, text: Var, x_t: Var, text_rows: &[usize], frame_rows: &[usize]) -> Result<Var> {
    let frames = tape.select_rows(x_t, frame_rows)?;
    let stacked = tape.concat(&[text, frames], 0)?;
    let n = text_rows.len() + frame_rows.len();
    let mut order = vec![0; n];
    for (k, &r) in text_rows.iter().chain(frame_rows).enumerate() {
        order[r] = k;
    }
    tape.select_rows(stacked, &order)
}
