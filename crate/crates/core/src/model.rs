//! The assembled encoder-decoder, its configuration and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::cache::{CacheBuilder, CacheBuilderConfig, CacheInputs, Caches, PatchGeometry, DOMAIN_COUNT};
use crate::config::{parse_bool, parse_kv, parse_value, render_kv};
use crate::decoder::{ClassifierHead, DecodeOutput, Decoder, GeneratorHead, GEN_STAGES};
use crate::error::{Error, Result};
use crate::fusion::{FrameExclusion, FusionConfig, FusionEncoder, FusionMode, FusionState, SaOrder};
use crate::params::ParamStore;
use crate::peripherals::{FeatureMap, MapSource, StructuredPeripheral, StructuredSchema, TextPeripheral, Tokenizer, VisionPeripheral, VISION_STRIDE};
use crate::sample::{Image, Label, Sample, StructuredSample};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classify { classes: usize },
    Generate { height: usize, width: usize, channels: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn classify(name: &str, classes: usize) -> Self {
        TaskSpec { name: name.into(), kind: TaskKind::Classify { classes } }
    }

    pub fn generate(name: &str, height: usize, width: usize, channels: usize) -> Self {
        TaskSpec { name: name.into(), kind: TaskKind::Generate { height, width, channels } }
    }

    /// `name:classify:N` or `name:generate:HxWxC`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad task spec `{s}` (want name:classify:N or name:generate:HxWxC)"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [name, kind, arg] = parts[..] else { return Err(bad()) };
        if name.is_empty() {
            return Err(bad());
        }
        match kind {
            "classify" => Ok(Self::classify(name, arg.parse().map_err(|_| bad())?)),
            "generate" => {
                let dims: Vec<usize> = arg.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                let [h, w, c] = dims[..] else { return Err(bad()) };
                Ok(Self::generate(name, h, w, c))
            }
            _ => Err(bad()),
        }
    }

    pub fn render(&self) -> String {
        match self.kind {
            TaskKind::Classify { classes } => format!("{}:classify:{classes}", self.name),
            TaskKind::Generate { height, width, channels } => format!("{}:generate:{height}x{width}x{channels}", self.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub d_dom: usize,
    pub d_m: usize,
    pub image_channels: usize,
    /// Largest image side the positional tables must cover.
    pub image_size: usize,
    pub patch: usize,
    pub patch_stride: usize,
    pub max_frames: usize,
    pub max_tokens: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub cca_layers: usize,
    pub cca_heads: usize,
    pub sa_layers: usize,
    pub sa_heads: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub sa_order: SaOrder,
    pub fusion: FusionMode,
    pub frame_exclusion: FrameExclusion,
    pub freeze_vision: bool,
    pub tasks: Vec<TaskSpec>,
    pub schema: Option<StructuredSchema>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration trainable on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            dim: 32,
            d_dom: 16,
            d_m: 32,
            image_channels: 3,
            image_size: 32,
            patch: 2,
            patch_stride: 2,
            max_frames: 64,
            max_tokens: 64,
            text_layers: 1,
            text_heads: 4,
            cca_layers: 1,
            cca_heads: 4,
            sa_layers: 1,
            sa_heads: 4,
            temporal_layers: 1,
            temporal_heads: 8,
            decoder_layers: 1,
            decoder_heads: 4,
            sa_order: SaOrder::Late,
            fusion: FusionMode::Full,
            frame_exclusion: FrameExclusion::Both,
            freeze_vision: false,
            tasks: vec![TaskSpec::classify("classify", 2)],
            schema: None,
            seed: 0,
        }
    }

    /// Full-width configuration: D = 512, three 4-head layers for cross-cache
    /// and non-temporal self-attention, six 8-head temporal layers, 14 × 14
    /// feature maps with 2 × 2 patches.
    pub fn full_width() -> Self {
        ModelConfig {
            dim: 512,
            d_m: 2048,
            image_size: 56,
            max_frames: 128,
            max_tokens: 128,
            text_heads: 8,
            cca_layers: 3,
            sa_layers: 3,
            temporal_layers: 6,
            decoder_layers: 6,
            decoder_heads: 8,
            freeze_vision: true,
            ..Self::desk()
        }
    }

    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry { p_h: self.patch, p_w: self.patch, stride: self.patch_stride }
    }

    pub fn map_side(&self) -> usize {
        self.image_size / VISION_STRIDE
    }

    pub fn grid_side(&self) -> usize {
        let m = self.map_side();
        if m < self.patch || self.patch_stride == 0 { 1 } else { (m - self.patch) / self.patch_stride + 1 }
    }

    /// Every problem with the configuration; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.dim == 0 || self.dim % 4 != 0 {
            p.push(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        for (name, h) in [
            ("text_heads", self.text_heads),
            ("cca_heads", self.cca_heads),
            ("sa_heads", self.sa_heads),
            ("temporal_heads", self.temporal_heads),
            ("decoder_heads", self.decoder_heads),
        ] {
            if h == 0 || self.dim % h != 0 {
                p.push(format!("{name} = {h} does not divide dim {}", self.dim));
            }
        }
        if self.image_size % VISION_STRIDE != 0 || self.image_size == 0 {
            p.push(format!("image_size {} must be a positive multiple of {VISION_STRIDE}", self.image_size));
        } else if self.patch == 0 || self.patch > self.map_side() {
            p.push(format!("patch {} does not fit a {}-wide feature map", self.patch, self.map_side()));
        }
        if self.patch_stride == 0 {
            p.push("patch_stride must be positive".into());
        }
        if self.d_m == 0 || self.d_dom == 0 || self.image_channels == 0 {
            p.push("d_m, d_dom and image_channels must be positive".into());
        }
        if self.max_frames == 0 || self.max_tokens == 0 {
            p.push("max_frames and max_tokens must be positive".into());
        }
        if self.tasks.is_empty() {
            p.push("at least one task is required".into());
        }
        for t in &self.tasks {
            match t.kind {
                TaskKind::Classify { classes } if classes < 2 => p.push(format!("task {} needs at least 2 classes", t.name)),
                TaskKind::Generate { height, width, channels } => {
                    let f = 1 << GEN_STAGES;
                    if height % f != 0 || width % f != 0 || height == 0 || width == 0 || channels == 0 {
                        p.push(format!("task {}: generated frame must be a positive multiple of {f}", t.name));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = &self.schema {
            if let Err(e) = s.validate() {
                p.push(e.to_string());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() { Ok(()) } else { Err(Error::Config(p.join("; "))) }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            dim: self.dim,
            cca_layers: self.cca_layers,
            cca_heads: self.cca_heads,
            sa_layers: self.sa_layers,
            sa_heads: self.sa_heads,
            temporal_layers: self.temporal_layers,
            temporal_heads: self.temporal_heads,
            sa_order: self.sa_order,
            mode: self.fusion,
            frame_exclusion: self.frame_exclusion,
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "dim", "d_dom", "d_m", "image_channels", "image_size", "patch", "patch_stride", "max_frames", "max_tokens",
        "text_layers", "text_heads", "cca_layers", "cca_heads", "sa_layers", "sa_heads", "temporal_layers",
        "temporal_heads", "decoder_layers", "decoder_heads", "sa_order", "fusion", "frame_exclusion",
        "freeze_vision", "tasks", "model_seed",
    ];

    /// Applies one key; `Ok(false)` when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        macro_rules! num {
            ($f:ident) => {
                self.$f = parse_value(key, value)?
            };
        }
        let kw = |ok: bool| if ok { Ok(()) } else { Err(Error::Config(format!("`{key}`: unknown value `{value}`"))) };
        match key {
            "dim" => num!(dim),
            "d_dom" => num!(d_dom),
            "d_m" => num!(d_m),
            "image_channels" => num!(image_channels),
            "image_size" => num!(image_size),
            "patch" => num!(patch),
            "patch_stride" => num!(patch_stride),
            "max_frames" => num!(max_frames),
            "max_tokens" => num!(max_tokens),
            "text_layers" => num!(text_layers),
            "text_heads" => num!(text_heads),
            "cca_layers" => num!(cca_layers),
            "cca_heads" => num!(cca_heads),
            "sa_layers" => num!(sa_layers),
            "sa_heads" => num!(sa_heads),
            "temporal_layers" => num!(temporal_layers),
            "temporal_heads" => num!(temporal_heads),
            "decoder_layers" => num!(decoder_layers),
            "decoder_heads" => num!(decoder_heads),
            "model_seed" => num!(seed),
            "sa_order" => {
                let v = SaOrder::parse(value);
                kw(v.is_some())?;
                self.sa_order = v.unwrap();
            }
            "fusion" => {
                let v = FusionMode::parse(value);
                kw(v.is_some())?;
                self.fusion = v.unwrap();
            }
            "frame_exclusion" => {
                let v = FrameExclusion::parse(value);
                kw(v.is_some())?;
                self.frame_exclusion = v.unwrap();
            }
            "freeze_vision" => self.freeze_vision = parse_bool(key, value)?,
            "tasks" => self.tasks = value.split(',').map(TaskSpec::parse).collect::<Result<_>>()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let v = [
            self.dim, self.d_dom, self.d_m, self.image_channels, self.image_size, self.patch, self.patch_stride,
            self.max_frames, self.max_tokens, self.text_layers, self.text_heads, self.cca_layers, self.cca_heads,
            self.sa_layers, self.sa_heads, self.temporal_layers, self.temporal_heads, self.decoder_layers,
            self.decoder_heads,
        ];
        let mut out: Vec<(&'static str, String)> = Self::KEYS.iter().zip(v).map(|(k, v)| (*k, v.to_string())).collect();
        out.push(("sa_order", self.sa_order.to_string()));
        out.push(("fusion", self.fusion.to_string()));
        out.push(("frame_exclusion", self.frame_exclusion.to_string()));
        out.push(("freeze_vision", self.freeze_vision.to_string()));
        out.push(("tasks", self.tasks.iter().map(TaskSpec::render).collect::<Vec<_>>().join(",")));
        out.push(("model_seed", self.seed.to_string()));
        out
    }

    /// Trainable scalar count derived from the configuration alone.
    pub fn count_params(&self, vocab: usize, exclude_heads: bool) -> usize {
        let d = self.dim;
        let linear = |i: usize, o: usize| i * o + o;
        let mha = 4 * linear(d, d) - d;
        let ln = 2 * d;
        let ff = linear(d, 4 * d) + linear(4 * d, d);
        let block = mha + 2 * ln + ff;
        let mut n = 0;
        if !self.freeze_vision {
            n += linear(self.image_channels * 9, 16) + linear(16 * 9, 32) + linear(32 * 9, self.d_m);
        }
        n += vocab * d + self.max_tokens * d;
        if let Some(s) = &self.schema {
            n += s.features.iter().map(|f| f.states.len() * d).sum::<usize>();
            n += linear(s.one_hot_dim() + s.numeric_dim, 2 * d) + linear(2 * d, d);
        }
        n += self.geometry().patch_dim(self.d_m) * d;
        n += 2 * self.grid_side() * (d / 4) + self.max_frames * (d / 2);
        n += DOMAIN_COUNT * self.d_dom + linear(d + self.d_dom, d);
        n += self.text_layers * block;
        if self.fusion == FusionMode::Full {
            n += 6 * (self.cca_layers * block + d * d) + 3 * linear(2 * d, d);
        }
        n += (2 * self.sa_layers + self.temporal_layers) * block;
        n += self.tasks.len() * d + self.decoder_layers * (3 * mha + linear(d, d) + 4 * ln + ff);
        if !exclude_heads {
            for t in &self.tasks {
                n += match t.kind {
                    TaskKind::Classify { classes } => linear(2 * d, d) + linear(d, classes),
                    TaskKind::Generate { height, width, channels } => {
                        let f = 1 << GEN_STAGES;
                        let plan = GeneratorHead::channel_plan(channels);
                        linear(d, plan[0] * (height / f) * (width / f))
                            + (0..GEN_STAGES).map(|s| plan[s] * plan[s + 1] * 16 + plan[s + 1]).sum::<usize>()
                    }
                };
            }
        }
        n
    }

    pub fn to_text(&self) -> String {
        render_kv(&self.to_kv())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk();
        for e in parse_kv(text)? {
            if !cfg.set(&e.key, &e.value)? {
                return Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key)));
            }
        }
        Ok(cfg)
    }
}

pub enum Head {
    Classify(ClassifierHead),
    Generate(GeneratorHead),
}

/// Visual input after optional precomputation of frozen vision features.
#[derive(Clone, Debug)]
pub enum Visual {
    Pixels(Tensor),
    Features(Tensor),
}

#[derive(Clone, Debug)]
pub enum Target {
    Class(usize),
    /// `[C, H, W]`.
    Frame(Tensor),
}

/// A sample converted to model-ready form; reusable across epochs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub tokens: Option<Vec<usize>>,
    pub visuals: Vec<(MapSource, Visual)>,
    pub structured: Vec<StructuredSample>,
    pub task_id: usize,
    pub target: Target,
}

pub struct ForwardOutput {
    pub caches: Caches,
    pub fusion: FusionState,
    pub decode: DecodeOutput,
    /// Logits `1 × classes` or a `[C, H, W]` frame.
    pub output: Var,
}

pub struct SOmninet {
    pub cfg: ModelConfig,
    pub tokenizer: Tokenizer,
    pub store: ParamStore,
    pub vision: VisionPeripheral,
    pub text: TextPeripheral,
    pub structured: Option<StructuredPeripheral>,
    pub cache: CacheBuilder,
    pub fusion: FusionEncoder,
    pub decoder: Decoder,
    pub heads: Vec<Head>,
}

impl SOmninet {
    pub fn new(cfg: ModelConfig, tokenizer: Tokenizer) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let vision = VisionPeripheral::new(&mut store, &mut rng, cfg.image_channels, cfg.d_m, !cfg.freeze_vision);
        let text = TextPeripheral::new(&mut store, &mut rng, tokenizer.len(), cfg.max_tokens, d);
        let structured = match &cfg.schema {
            Some(s) => Some(StructuredPeripheral::new(&mut store, &mut rng, s.clone(), d)?),
            None => None,
        };
        let cache = CacheBuilder::new(
            &mut store,
            &mut rng,
            &CacheBuilderConfig {
                dim: d,
                d_m: cfg.d_m,
                d_dom: cfg.d_dom,
                geom: cfg.geometry(),
                grid_side: cfg.grid_side(),
                max_frames: cfg.max_frames,
                text_heads: cfg.text_heads,
                text_layers: cfg.text_layers,
            },
        )?;
        let fusion = FusionEncoder::new(&mut store, &mut rng, cfg.fusion_config())?;
        let decoder = Decoder::new(&mut store, &mut rng, d, cfg.decoder_heads, cfg.decoder_layers, cfg.tasks.len())?;
        let heads = cfg
            .tasks
            .iter()
            .map(|t| {
                let name = format!("head.{}", t.name);
                Ok(match t.kind {
                    TaskKind::Classify { classes } => Head::Classify(ClassifierHead::new(&mut store, &mut rng, &name, d, classes)),
                    TaskKind::Generate { height, width, channels } => {
                        Head::Generate(GeneratorHead::new(&mut store, &mut rng, &name, d, height, width, channels)?)
                    }
                })
            })
            .collect::<Result<_>>()?;
        store.round_all(Precision::F32);
        Ok(SOmninet { cfg, tokenizer, store, vision, text, structured, cache, fusion, decoder, heads })
    }

    pub fn task_id(&self, name: &str) -> Option<usize> {
        self.cfg.tasks.iter().position(|t| t.name == name)
    }

    pub fn count_params(&self, exclude_heads: bool) -> usize {
        self.store.count_trainable(exclude_heads)
    }

    /// Fits the numeric min-max scaler on training samples.
    pub fn fit_scaler<'a>(&mut self, samples: impl IntoIterator<Item = &'a Sample>) {
        if let Some(sp) = &self.structured {
            let rows = samples.into_iter().flat_map(|s| s.structured.iter().map(|x| x.numeric.as_slice()));
            sp.scaler.fit(&mut self.store, rows);
            self.store.round_all(Precision::F32);
        }
    }

    fn visual(&self, img: &Image) -> Result<Visual> {
        if self.cfg.freeze_vision {
            Ok(Visual::Features(self.vision.features(&self.store, img)?))
        } else {
            Ok(Visual::Pixels(img.to_chw()))
        }
    }

    pub fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        sample.validate()?;
        let task = self
            .cfg
            .tasks
            .get(sample.task_id)
            .ok_or_else(|| Error::Index(format!("unknown task id {}", sample.task_id)))?;
        let target = match (&task.kind, &sample.label) {
            (TaskKind::Classify { classes }, Label::Class(c)) if c < classes => Target::Class(*c),
            (TaskKind::Generate { height, width, channels }, Label::Frame(f))
                if (f.height, f.width, f.channels) == (*height, *width, *channels) =>
            {
                Target::Frame(f.to_chw())
            }
            (_, l) => return Err(Error::Config(format!("label {l:?} does not fit task {}", task.name))),
        };
        if !sample.structured.is_empty() {
            let sp = self.structured.as_ref().ok_or_else(|| Error::Schema("model has no structured schema".into()))?;
            for s in &sample.structured {
                sp.schema.check(s)?;
            }
        }
        let mut visuals = Vec::new();
        if let Some(img) = &sample.image {
            visuals.push((MapSource::Image, self.visual(img)?));
        }
        if let Some(frames) = &sample.video {
            for (f, img) in frames.iter().enumerate() {
                visuals.push((MapSource::Frame(f), self.visual(img)?));
            }
        }
        Ok(Prepared {
            tokens: sample.text.as_deref().map(|t| self.tokenizer.tokenize(t)),
            visuals,
            structured: sample.structured.clone(),
            task_id: sample.task_id,
            target,
        })
    }

    pub fn build_caches(&self, tape: &mut Tape<'_>, p: &Prepared) -> Result<Caches> {
        let text = match &p.tokens {
            Some(ids) => Some(self.text.encode_tokens(tape, ids)?),
            None => None,
        };
        let maps = p
            .visuals
            .iter()
            .map(|(source, v)| {
                let grid = match v {
                    Visual::Features(t) => tape.constant(t.clone()),
                    Visual::Pixels(t) => {
                        let x = tape.constant(t.clone());
                        self.vision.forward(tape, x)?
                    }
                };
                Ok(FeatureMap { grid, source: *source })
            })
            .collect::<Result<_>>()?;
        let structured = match (&self.structured, p.structured.is_empty()) {
            (_, true) => Vec::new(),
            (Some(sp), false) => p.structured.iter().map(|s| sp.encode(tape, &self.store, s)).collect::<Result<_>>()?,
            (None, false) => return Err(Error::Schema("model has no structured schema".into())),
        };
        self.cache.build(tape, &CacheInputs { text, maps, structured })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Prepared, retain: bool) -> Result<ForwardOutput> {
        let caches = self.build_caches(tape, p)?;
        let fusion = self.fusion.fuse(tape, &caches, retain)?;
        let decode = self.decoder.decode(tape, p.task_id, fusion.z_t(), fusion.z_p())?;
        let output = match &self.heads[p.task_id] {
            Head::Classify(h) => h.classify(tape, decode.h, fusion.z_s())?,
            Head::Generate(g) => g.generate(tape, decode.h)?,
        };
        Ok(ForwardOutput { caches, fusion, decode, output })
    }

    pub fn loss(&self, tape: &mut Tape<'_>, out: &ForwardOutput, target: &Target) -> Result<Var> {
        match target {
            Target::Class(c) => tape.cross_entropy(out.output, *c),
            Target::Frame(f) => tape.l1_loss(out.output, f),
        }
    }

    /// Runs the model without gradients and returns the output tensor.
    pub fn infer(&self, p: &Prepared) -> Result<Tensor> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, p, false)?;
        Ok(tape.tensor(out.output))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("params"))?;
        std::fs::write(dir.join("config.txt"), self.cfg.to_text())?;
        self.tokenizer.save(&dir.join("vocab.txt"))?;
        if let Some(s) = &self.cfg.schema {
            s.save(&dir.join("schema.txt"))?;
        }
        let mut manifest = String::new();
        for (id, e) in self.store.iter() {
            let file = format!("params/{:05}.somt", id.index());
            e.value.save(&dir.join(&file))?;
            let shape: Vec<String> = e.value.shape().iter().map(usize::to_string).collect();
            writeln!(manifest, "{}\t{file}\t{}", e.name, shape.join(",")).unwrap();
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut cfg = ModelConfig::from_text(&std::fs::read_to_string(dir.join("config.txt"))?)?;
        let schema_path = dir.join("schema.txt");
        if schema_path.exists() {
            cfg.schema = Some(StructuredSchema::load(&schema_path)?);
        }
        let tokenizer = Tokenizer::load(&dir.join("vocab.txt"))?;
        let mut model = SOmninet::new(cfg, tokenizer)?;
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut seen = 0;
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let [name, file, _shape] = line.split('\t').collect::<Vec<_>>()[..] else {
                return Err(Error::Format(format!("bad manifest line `{line}`")));
            };
            let id = model
                .store
                .find(name)
                .ok_or_else(|| Error::Format(format!("checkpoint parameter `{name}` has no slot in the configured model")))?;
            let t = Tensor::load(&dir.join(file))?;
            if t.shape() != model.store.get(id).shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}`: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = t;
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {seen} parameters, model expects {}",
                model.store.len()
            )));
        }
        Ok(model)
    }
}
