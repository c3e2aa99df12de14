//! Patching, positional and domain encodings, and assembly of the
//! structured (S), temporal (T) and spatial (P) caches.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{AttentionStack, Linear};
use crate::params::{init, ParamId, ParamStore};
use crate::peripherals::{FeatureMap, StructuredEncoding};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub p_h: usize,
    pub p_w: usize,
    pub stride: usize,
}

impl PatchGeometry {
    pub fn square(p: usize) -> Self {
        PatchGeometry { p_h: p, p_w: p, stride: p }
    }

    /// Top-left corners `(row, col)` of every patch that fits, row-major.
    pub fn locations(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        if self.p_h == 0 || self.p_w == 0 || self.stride == 0 {
            return Err(Error::Config("patch extents and stride must be positive".into()));
        }
        if self.p_h > h || self.p_w > w {
            return Err(Error::Config(format!(
                "patch {}x{} larger than feature map {h}x{w}",
                self.p_h, self.p_w
            )));
        }
        let rows = (0..=h - self.p_h).step_by(self.stride);
        Ok(rows.flat_map(|i| (0..=w - self.p_w).step_by(self.stride).map(move |j| (i, j))).collect())
    }

    /// Patch-grid side lengths `(rows, cols)` for an `h × w` map.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.locations(h, w)?;
        Ok(((h - self.p_h) / self.stride + 1, (w - self.p_w) / self.stride + 1))
    }

    pub fn patch_dim(&self, d_m: usize) -> usize {
        self.p_h * self.p_w * d_m
    }

    /// Flat `[C, H, W]` source index for every patch element, patch-major,
    /// each patch ordered `(dy, dx, c)`.
    fn gather_index(&self, d_m: usize, h: usize, w: usize) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
        let locs = self.locations(h, w)?;
        let mut index = Vec::with_capacity(locs.len() * self.patch_dim(d_m));
        for &(i, j) in &locs {
            for dy in 0..self.p_h {
                for dx in 0..self.p_w {
                    for c in 0..d_m {
                        index.push((c * h + i + dy) * w + j + dx);
                    }
                }
            }
        }
        Ok((index, locs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchCoord {
    pub x: usize,
    pub y: usize,
    pub f: usize,
}

pub struct PatchSequence {
    pub patches: Var,
    pub coords: Vec<PatchCoord>,
}

fn map_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("feature map must be [d_m, H, W], got {shape:?}"))),
    }
}

fn coords_of(locs: &[(usize, usize)], stride: usize, f: usize) -> Vec<PatchCoord> {
    locs.iter().map(|&(i, j)| PatchCoord { x: j / stride, y: i / stride, f }).collect()
}

/// Splits a feature map into `T_p × d_p` patch rows.
pub fn patchify(tape: &mut Tape<'_>, fm: &FeatureMap, geom: PatchGeometry) -> Result<PatchSequence> {
    let (d_m, h, w) = map_dims(tape.shape(fm.grid))?;
    let (index, locs) = geom.gather_index(d_m, h, w)?;
    let patches = tape.gather(fm.grid, index, vec![locs.len(), geom.patch_dim(d_m)])?;
    Ok(PatchSequence { patches, coords: coords_of(&locs, geom.stride, fm.source.frame_index()) })
}

/// Tensor-level patchify of a `[d_m, H, W]` map.
pub fn patchify_tensor(map: &Tensor, geom: PatchGeometry) -> Result<(Tensor, Vec<PatchCoord>)> {
    let (d_m, h, w) = map_dims(map.shape())?;
    let (index, locs) = geom.gather_index(d_m, h, w)?;
    let data = index.iter().map(|&k| map.data()[k]).collect();
    Ok((Tensor::new(vec![locs.len(), geom.patch_dim(d_m)], data)?, coords_of(&locs, geom.stride, 0)))
}

/// Inverse of [`patchify_tensor`]. Overlapping patches overwrite in order;
/// cells no patch covers stay zero.
pub fn unpatchify(patches: &Tensor, d_m: usize, h: usize, w: usize, geom: PatchGeometry) -> Result<Tensor> {
    let (index, locs) = geom.gather_index(d_m, h, w)?;
    if patches.shape() != [locs.len(), geom.patch_dim(d_m)] {
        return Err(Error::Shape(format!(
            "expected {} patches of width {}, got {:?}",
            locs.len(),
            geom.patch_dim(d_m),
            patches.shape()
        )));
    }
    let mut out = Tensor::zeros(&[d_m, h, w]);
    for (k, &src) in index.iter().enumerate() {
        out.data_mut()[src] = patches.data()[k];
    }
    Ok(out)
}

/// Per-axis patch position tables and a frame table.
pub struct PositionalTables {
    pub x: ParamId,
    pub y: ParamId,
    pub f: ParamId,
    pub side: usize,
    pub max_frames: usize,
    pub dim: usize,
}

impl PositionalTables {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, side: usize, max_frames: usize, dim: usize) -> Result<Self> {
        if dim % 4 != 0 {
            return Err(Error::Config(format!("embedding dimension {dim} not divisible by 4")));
        }
        Ok(PositionalTables {
            x: store.add("pos.x", init::normal(rng, &[side, dim / 4], 0.5), true),
            y: store.add("pos.y", init::normal(rng, &[side, dim / 4], 0.5), true),
            f: store.add("pos.f", init::normal(rng, &[max_frames, dim / 2], 0.5), true),
            side,
            max_frames,
            dim,
        })
    }

    /// `concat(E_x[x], E_y[y], E_f[f])` per coordinate.
    pub fn embed(&self, tape: &mut Tape<'_>, coords: &[PatchCoord]) -> Result<Var> {
        for c in coords {
            if c.x >= self.side || c.y >= self.side || c.f >= self.max_frames {
                return Err(Error::Index(format!(
                    "patch coordinate ({}, {}, {}) outside tables (side {}, frames {})",
                    c.x, c.y, c.f, self.side, self.max_frames
                )));
            }
        }
        let tx = tape.param(self.x);
        let ty = tape.param(self.y);
        let tf = tape.param(self.f);
        let ex = tape.embedding(tx, &coords.iter().map(|c| c.x).collect::<Vec<_>>())?;
        let ey = tape.embedding(ty, &coords.iter().map(|c| c.y).collect::<Vec<_>>())?;
        let ef = tape.embedding(tf, &coords.iter().map(|c| c.f).collect::<Vec<_>>())?;
        tape.concat(&[ex, ey, ef], 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Text = 0,
    Spatial = 1,
    Frame = 2,
    Structured = 3,
}

pub const DOMAIN_COUNT: usize = 4;

/// Learned per-domain vectors appended to each row, then a shared projection back to `D`.
pub struct DomainEncoder {
    pub table: ParamId,
    pub proj: Linear,
    pub d_dom: usize,
}

impl DomainEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, dim: usize, d_dom: usize) -> Self {
        DomainEncoder {
            table: store.add("domain.table", init::normal(rng, &[DOMAIN_COUNT, d_dom], 1.0), true),
            proj: Linear::new(store, rng, "domain.proj", dim + d_dom, dim, true),
            d_dom,
        }
    }

    pub fn apply(&self, tape: &mut Tape<'_>, rows: Var, domain_id: usize) -> Result<Var> {
        if domain_id >= DOMAIN_COUNT {
            return Err(Error::Index(format!("unknown domain id {domain_id}")));
        }
        let n = tape.shape(rows)[0];
        let table = tape.param(self.table);
        let dom = tape.embedding(table, &vec![domain_id; n])?;
        let cat = tape.concat(&[rows, dom], 1)?;
        self.proj.forward(tape, cat)
    }
}

/// Mean over a frame's patch rows.
pub fn pool_frame(tape: &mut Tape<'_>, rows: Var) -> Result<Var> {
    if tape.shape(rows)[0] == 0 {
        return Err(Error::EmptyInput("cannot pool a frame with no patches".into()));
    }
    tape.mean(rows, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    TextToken,
    FramePool,
    Patch,
    StructuredWhole,
    StructuredEntity,
}

#[derive(Clone, Debug)]
pub struct Cache {
    pub entries: Var,
    pub origin: Vec<Origin>,
}

impl Cache {
    pub fn empty(tape: &mut Tape<'_>, dim: usize) -> Self {
        Cache { entries: tape.constant(Tensor::zeros(&[0, dim])), origin: Vec::new() }
    }

    fn from_parts(tape: &mut Tape<'_>, dim: usize, parts: Vec<Var>, origin: Vec<Origin>) -> Result<Self> {
        if parts.is_empty() {
            return Ok(Self::empty(tape, dim));
        }
        let entries = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
        Ok(Cache { entries, origin })
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn frame_flags(&self) -> Vec<bool> {
        self.origin.iter().map(|&o| o == Origin::FramePool).collect()
    }
}

pub struct Caches {
    pub s: Cache,
    pub t: Cache,
    pub p: Cache,
}

/// Peripheral outputs for one sample.
pub struct CacheInputs {
    /// `Q × D` token encodings (embedding plus token position).
    pub text: Option<Var>,
    /// Still images and video frames, in sample order.
    pub maps: Vec<FeatureMap>,
    pub structured: Vec<StructuredEncoding>,
}

pub struct CacheBuilder {
    pub geom: PatchGeometry,
    pub patch_proj: Linear,
    pub positions: PositionalTables,
    pub domains: DomainEncoder,
    pub text_encoder: AttentionStack,
    pub dim: usize,
}

pub struct CacheBuilderConfig {
    pub dim: usize,
    pub d_m: usize,
    pub d_dom: usize,
    pub geom: PatchGeometry,
    pub grid_side: usize,
    pub max_frames: usize,
    pub text_heads: usize,
    pub text_layers: usize,
}

impl CacheBuilder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CacheBuilderConfig) -> Result<Self> {
        Ok(CacheBuilder {
            geom: cfg.geom,
            patch_proj: Linear::new(store, rng, "patch.proj", cfg.geom.patch_dim(cfg.d_m), cfg.dim, false),
            positions: PositionalTables::new(store, rng, cfg.grid_side, cfg.max_frames, cfg.dim)?,
            domains: DomainEncoder::new(store, rng, cfg.dim, cfg.d_dom),
            text_encoder: AttentionStack::new(store, rng, "text.encoder", cfg.dim, cfg.text_heads, cfg.text_layers)?,
            dim: cfg.dim,
        })
    }

    /// Projected and positionally embedded patches of one map, before domain stamping.
    pub fn embed_patches(&self, tape: &mut Tape<'_>, fm: &FeatureMap) -> Result<Var> {
        let seq = patchify(tape, fm, self.geom)?;
        let proj = self.patch_proj.forward(tape, seq.patches)?;
        let pos = self.positions.embed(tape, &seq.coords)?;
        tape.add(proj, pos)
    }

    pub fn build(&self, tape: &mut Tape<'_>, inputs: &CacheInputs) -> Result<Caches> {
        let (mut p_parts, mut p_origin) = (Vec::new(), Vec::new());
        let mut frames = Vec::new();
        for fm in &inputs.maps {
            let rows = self.embed_patches(tape, fm)?;
            let n = tape.shape(rows)[0];
            if matches!(fm.source, crate::peripherals::MapSource::Frame(_)) {
                let pooled = pool_frame(tape, rows)?;
                frames.push(self.domains.apply(tape, pooled, Domain::Frame as usize)?);
            }
            p_parts.push(self.domains.apply(tape, rows, Domain::Spatial as usize)?);
            p_origin.extend(std::iter::repeat_n(Origin::Patch, n));
        }
        let p = Cache::from_parts(tape, self.dim, p_parts, p_origin)?;

        let (mut t_parts, mut t_origin) = (Vec::new(), Vec::new());
        if let Some(text) = inputs.text {
            let q = tape.shape(text)[0];
            if q > 0 {
                let stamped = self.domains.apply(tape, text, Domain::Text as usize)?;
                let (enc, _) = self.text_encoder.forward(tape, stamped, None, None)?;
                t_parts.push(enc);
                t_origin.extend(std::iter::repeat_n(Origin::TextToken, q));
            }
        }
        t_origin.extend(std::iter::repeat_n(Origin::FramePool, frames.len()));
        t_parts.extend(frames);
        let t = Cache::from_parts(tape, self.dim, t_parts, t_origin)?;

        let (mut s_parts, mut s_origin) = (Vec::new(), Vec::new());
        for enc in &inputs.structured {
            let c = tape.shape(enc.entity_rows)[0];
            let rows = tape.concat(&[enc.whole_row, enc.entity_rows], 0)?;
            s_parts.push(self.domains.apply(tape, rows, Domain::Structured as usize)?);
            s_origin.push(Origin::StructuredWhole);
            s_origin.extend(std::iter::repeat_n(Origin::StructuredEntity, c));
        }
        let s = Cache::from_parts(tape, self.dim, s_parts, s_origin)?;
        Ok(Caches { s, t, p })
    }
}
