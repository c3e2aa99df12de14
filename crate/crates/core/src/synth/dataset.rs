use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cluster::FeaturePlan;
use super::svqa::{assemble_svqa, SyntheticGenConfig};
use super::tasks::{joint_schema, next_frame, structured_joint, two_question, video_sentiment, Generated, ANSWER_CLASSES};
use super::scene::SIDE;
use crate::config::{parse_kv, parse_value, render_kv};
use crate::error::{Error, Result};
use crate::model::TaskSpec;
use crate::peripherals::StructuredSchema;
use crate::sample::{Image, Label, Sample, StructuredSample};
use crate::tensor::Tensor;

/// Ground truth kept beside a record and never shown to the model.
pub type Annotation = BTreeMap<String, String>;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTask {
    TwoQuestion,
    StructuredJoint,
    VideoSentiment,
    NextFrame,
    Svqa,
}

impl ToyTask {
    pub const ALL: [ToyTask; 5] = [Self::TwoQuestion, Self::StructuredJoint, Self::VideoSentiment, Self::NextFrame, Self::Svqa];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoQuestion => "two_question",
            Self::StructuredJoint => "structured_joint",
            Self::VideoSentiment => "video_sentiment",
            Self::NextFrame => "next_frame",
            Self::Svqa => "svqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub task: ToyTask,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    /// Objects per scene in the two-question and structured joint tasks.
    pub objects: usize,
    /// Input frames of video tasks.
    pub frames: usize,
    /// Structured sources per sample in the structured joint task.
    pub sources: usize,
    pub gen: SyntheticGenConfig,
}

impl DatasetConfig {
    pub fn new(task: ToyTask, train: usize, val: usize, test: usize, seed: u64) -> Self {
        Self { task, train, val, test, seed, objects: 2, frames: 3, sources: 1, gen: SyntheticGenConfig::default() }
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(2..=4).contains(&self.objects) {
            p.push("objects must be in 2..=4".into());
        }
        if self.frames == 0 || super::tasks::STEP * (self.frames + 1) + super::scene::EXTENT > SIDE {
            p.push(format!("frames must be in 1..={}", (SIDE - super::scene::EXTENT) / super::tasks::STEP - 1));
        }
        if let Err(e) = self.gen.validate() {
            p.push(e.to_string());
        }
        p
    }

    /// Applies one key; `Ok(false)` when the key is not a dataset key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "task" => self.task = ToyTask::parse(value).ok_or_else(|| Error::Config(format!("`task`: unknown task `{value}`")))?,
            "train" => self.train = parse_value(key, value)?,
            "val" => self.val = parse_value(key, value)?,
            "test" => self.test = parse_value(key, value)?,
            "data_seed" => self.seed = parse_value(key, value)?,
            "objects" => self.objects = parse_value(key, value)?,
            "frames" => self.frames = parse_value(key, value)?,
            "sources" => self.sources = parse_value(key, value)?,
            "classes" => self.gen.n_c = parse_value(key, value)?,
            "numeric_dim" => self.gen.numeric_dim = parse_value(key, value)?,
            "sigma" => self.gen.sigma = parse_value(key, value)?,
            "important_words" => self.gen.words = parse_value(key, value)?,
            "important_regions" => self.gen.regions = parse_value(key, value)?,
            "spatial_features" => self.gen.plan.spatial = parse_value(key, value)?,
            "text_features" => self.gen.plan.text = parse_value(key, value)?,
            "feature_states" => self.gen.plan.states = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let g = &self.gen;
        let FeaturePlan { spatial, text, states } = g.plan;
        vec![
            ("task", self.task.name().into()),
            ("train", self.train.to_string()),
            ("val", self.val.to_string()),
            ("test", self.test.to_string()),
            ("data_seed", self.seed.to_string()),
            ("objects", self.objects.to_string()),
            ("frames", self.frames.to_string()),
            ("sources", self.sources.to_string()),
            ("classes", g.n_c.to_string()),
            ("numeric_dim", g.numeric_dim.to_string()),
            ("sigma", g.sigma.to_string()),
            ("important_words", g.words.to_string()),
            ("important_regions", g.regions.to_string()),
            ("spatial_features", spatial.to_string()),
            ("text_features", text.to_string()),
            ("feature_states", states.to_string()),
        ]
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::new(ToyTask::TwoQuestion, 0, 0, 0, 0);
        let mut problems = Vec::new();
        for e in parse_kv(text)? {
            match cfg.set(&e.key, &e.value) {
                Ok(true) => {}
                Ok(false) => problems.push(format!("line {}: unknown key `{}`", e.line, e.key)),
                Err(err) => problems.push(format!("line {}: {err}", e.line)),
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() { Ok(cfg) } else { Err(Error::Config(problems.join("; "))) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub samples: Vec<Sample>,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    pub tasks: Vec<TaskSpec>,
    pub schema: Option<StructuredSchema>,
    pub splits: Vec<Split>,
    pub warnings: Vec<String>,
}

impl SyntheticDataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits.iter().find(|s| s.name == name).ok_or_else(|| Error::Index(format!("no split `{name}`")))
    }
}

/// Task heads needed by a toy task.
pub fn task_specs(task: ToyTask, gen: &SyntheticGenConfig) -> Vec<TaskSpec> {
    match task {
        ToyTask::TwoQuestion => vec![TaskSpec::classify("answer", ANSWER_CLASSES)],
        ToyTask::StructuredJoint => vec![TaskSpec::classify("top", 2)],
        ToyTask::VideoSentiment => vec![TaskSpec::classify("sentiment", 2)],
        ToyTask::NextFrame => vec![TaskSpec::generate("next_frame", SIDE, SIDE, 3)],
        ToyTask::Svqa => vec![TaskSpec::classify("answer", gen.n_c)],
    }
}

/// Generates every split from the master seed; each split draws from its own
/// stream so split sizes do not perturb one another.
pub fn assemble_dataset(cfg: &DatasetConfig) -> Result<SyntheticDataset> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let sizes = cfg.split_sizes();
    let mut schema = None;
    let mut warnings = Vec::new();
    let per_split: Vec<Vec<Generated>> = if cfg.task == ToyTask::Svqa {
        let (mut all, clustered, w) = assemble_svqa(sizes.iter().sum(), &cfg.gen, cfg.seed)?;
        schema = Some(clustered.schema);
        warnings = w;
        let mut out = Vec::new();
        for &n in &sizes {
            let rest = all.split_off(n);
            out.push(all);
            all = rest;
        }
        out
    } else {
        if cfg.task == ToyTask::StructuredJoint {
            schema = Some(joint_schema());
        }
        sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(k as u64 + 1);
                (0..n)
                    .map(|_| match cfg.task {
                        ToyTask::TwoQuestion => two_question(&mut rng, cfg.objects),
                        ToyTask::StructuredJoint => structured_joint(&mut rng, cfg.objects, cfg.sources),
                        ToyTask::VideoSentiment => video_sentiment(&mut rng, cfg.frames),
                        ToyTask::NextFrame => next_frame(&mut rng, cfg.frames),
                        ToyTask::Svqa => unreachable!(),
                    })
                    .collect()
            })
            .collect()
    };
    let splits = SPLITS
        .iter()
        .zip(per_split)
        .map(|(name, g)| {
            let (samples, annotations) = g.into_iter().map(|g| (g.sample, g.annotation)).unzip();
            Split { name: name.to_string(), samples, annotations }
        })
        .collect();
    Ok(SyntheticDataset { config: cfg.clone(), tasks: task_specs(cfg.task, &cfg.gen), schema, splits, warnings })
}

const MAGIC: &str = "SOMNI-DATASET 1";

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn video_tensor(frames: &[Image]) -> Result<Tensor> {
    let f = &frames[0];
    let mut data = Vec::with_capacity(frames.len() * f.data.len());
    for img in frames {
        if (img.height, img.width, img.channels) != (f.height, f.width, f.channels) {
            return Err(Error::Shape("video frames differ in shape".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![frames.len(), f.height, f.width, f.channels], data)
}

fn video_frames(t: &Tensor) -> Result<Vec<Image>> {
    let [n, h, w, c] = t.shape()[..] else {
        return Err(Error::Format(format!("video tensor of shape {:?}", t.shape())));
    };
    (0..n).map(|i| Image::new(h, w, c, t.data()[i * h * w * c..(i + 1) * h * w * c].to_vec())).collect()
}

/// Writes `manifest.txt`, `config.txt`, an optional `schema.txt`, and per
/// split `records.tsv`, `structured.csv`, `annotations.tsv` plus SOMT tensors.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = format!("{MAGIC}\ntask {}\n", ds.config.task.name());
    let tasks: Vec<String> = ds.tasks.iter().map(TaskSpec::render).collect();
    writeln!(manifest, "tasks {}", tasks.join(",")).unwrap();
    match &ds.schema {
        Some(s) => {
            s.save(&dir.join("schema.txt"))?;
            manifest.push_str("schema schema.txt\n");
        }
        None => manifest.push_str("schema -\n"),
    }
    std::fs::write(dir.join("config.txt"), render_kv(&ds.config.to_kv()))?;
    for split in &ds.splits {
        writeln!(manifest, "split {} {}", split.name, split.samples.len()).unwrap();
        let sdir = dir.join(&split.name);
        std::fs::create_dir_all(sdir.join("tensors"))?;
        let mut records = String::from("id\ttask\ttext\timage\tvideo\tsources\tlabel\n");
        let mut structured = String::new();
        let mut annotations = String::new();
        for (i, s) in split.samples.iter().enumerate() {
            let rel = |kind: &str| format!("tensors/{i:06}.{kind}.somt");
            let image = match &s.image {
                Some(img) => {
                    img.to_tensor().save(&sdir.join(rel("image")))?;
                    rel("image")
                }
                None => String::new(),
            };
            let video = match &s.video {
                Some(frames) if !frames.is_empty() => {
                    video_tensor(frames)?.save(&sdir.join(rel("video")))?;
                    rel("video")
                }
                _ => String::new(),
            };
            let label = match &s.label {
                Label::Class(c) => format!("class:{c}"),
                Label::Score(v) => format!("score:{v}"),
                Label::Frame(img) => {
                    img.to_tensor().save(&sdir.join(rel("target")))?;
                    format!("frame:{}", rel("target"))
                }
            };
            let text = s.text.as_deref().map(escape).unwrap_or_default();
            writeln!(records, "{i}\t{}\t{text}\t{image}\t{video}\t{}\t{label}", s.task_id, s.structured.len()).unwrap();
            for (k, src) in s.structured.iter().enumerate() {
                let cats = src.categorical.iter().map(usize::to_string);
                let nums = src.numeric.iter().map(f64::to_string);
                let fields: Vec<String> = [i.to_string(), k.to_string()].into_iter().chain(cats).chain(nums).collect();
                writeln!(structured, "{}", fields.join(",")).unwrap();
            }
            let ann: Vec<String> = split.annotations.get(i).into_iter().flatten().map(|(k, v)| format!("{k}={}", escape(v))).collect();
            writeln!(annotations, "{i}\t{}", ann.join("\t")).unwrap();
        }
        std::fs::write(sdir.join("records.tsv"), records)?;
        std::fs::write(sdir.join("structured.csv"), structured)?;
        std::fs::write(sdir.join("annotations.tsv"), annotations)?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn format_err(file: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{line}: {msg}", file.display()))
}

/// Reads a dataset written by [`write_dataset`]. Annotations are loaded only
/// when `with_annotations` is set.
pub fn read_dataset(dir: &Path, with_annotations: bool) -> Result<SyntheticDataset> {
    let mpath = dir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&mpath)?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(format_err(&mpath, 1, "not a dataset manifest"));
    }
    let config = DatasetConfig::from_text(&std::fs::read_to_string(dir.join("config.txt"))?)?;
    let (mut tasks, mut schema, mut splits) = (Vec::new(), None, Vec::new());
    for (n, line) in lines.enumerate() {
        let (key, rest) = line.split_once(' ').ok_or_else(|| format_err(&mpath, n + 2, "expected `key value`"))?;
        match key {
            "task" => {}
            "tasks" => tasks = rest.split(',').map(TaskSpec::parse).collect::<Result<_>>()?,
            "schema" if rest == "-" => {}
            "schema" => schema = Some(StructuredSchema::load(&dir.join(rest))?),
            "split" => {
                let (name, count) = rest.split_once(' ').ok_or_else(|| format_err(&mpath, n + 2, "expected `split name count`"))?;
                let count: usize = count.parse().map_err(|_| format_err(&mpath, n + 2, "bad record count"))?;
                let n_cat = schema.as_ref().map_or(0, |s: &StructuredSchema| s.features.len());
                splits.push(read_split(&dir.join(name), name, count, n_cat, with_annotations)?);
            }
            other => return Err(format_err(&mpath, n + 2, format!("unknown manifest key `{other}`"))),
        }
    }
    Ok(SyntheticDataset { config, tasks, schema, splits, warnings: Vec::new() })
}

fn read_split(dir: &Path, name: &str, count: usize, n_cat: usize, with_annotations: bool) -> Result<Split> {
    let rpath = dir.join("records.tsv");
    let spath = dir.join("structured.csv");
    let mut sources: BTreeMap<usize, Vec<StructuredSample>> = BTreeMap::new();
    for (n, line) in std::fs::read_to_string(&spath)?.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(format_err(&spath, n + 1, "too few fields"));
        }
        let record: usize = fields[0].parse().map_err(|_| format_err(&spath, n + 1, "bad record id"))?;
        sources.entry(record).or_default().push(StructuredSample { categorical: Vec::new(), numeric: Vec::new() });
        let src = sources.get_mut(&record).and_then(|v| v.last_mut()).expect("just pushed");
        if fields.len() < 2 + n_cat {
            return Err(format_err(&spath, n + 1, format!("expected {n_cat} categorical values")));
        }
        for f in &fields[2..2 + n_cat] {
            src.categorical.push(f.parse().map_err(|_| format_err(&spath, n + 1, format!("bad state `{f}`")))?);
        }
        for f in &fields[2 + n_cat..] {
            src.numeric.push(f.parse().map_err(|_| format_err(&spath, n + 1, format!("bad number `{f}`")))?);
        }
    }
    let mut samples = Vec::with_capacity(count);
    for (n, line) in std::fs::read_to_string(&rpath)?.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let [id, task, text, image, video, n_src, label] = f[..] else {
            return Err(format_err(&rpath, n + 1, format!("expected 7 fields, got {}", f.len())));
        };
        let id: usize = id.parse().map_err(|_| format_err(&rpath, n + 1, "bad id"))?;
        let load_img = |p: &str| -> Result<Option<Image>> { if p.is_empty() { Ok(None) } else { Image::from_tensor(&Tensor::load(&dir.join(p))?).map(Some) } };
        let label = match label.split_once(':') {
            Some(("class", c)) => Label::Class(c.parse().map_err(|_| format_err(&rpath, n + 1, "bad class"))?),
            Some(("score", v)) => Label::Score(v.parse().map_err(|_| format_err(&rpath, n + 1, "bad score"))?),
            Some(("frame", p)) => Label::Frame(load_img(p)?.expect("non-empty path")),
            _ => return Err(format_err(&rpath, n + 1, format!("bad label `{label}`"))),
        };
        let structured = sources.remove(&id).unwrap_or_default();
        if structured.len() != n_src.parse::<usize>().map_err(|_| format_err(&rpath, n + 1, "bad source count"))? {
            return Err(format_err(&rpath, n + 1, "structured source count disagrees with structured.csv"));
        }
        samples.push(Sample {
            image: load_img(image)?,
            video: if video.is_empty() { None } else { Some(video_frames(&Tensor::load(&dir.join(video))?)?) },
            text: if text.is_empty() { None } else { Some(unescape(text)) },
            structured,
            label,
            task_id: task.parse().map_err(|_| format_err(&rpath, n + 1, "bad task id"))?,
        });
    }
    if samples.len() != count {
        return Err(format_err(&rpath, 0, format!("manifest lists {count} records, found {}", samples.len())));
    }
    let mut annotations = Vec::new();
    if with_annotations {
        let apath = dir.join("annotations.tsv");
        for line in std::fs::read_to_string(&apath)?.lines() {
            let mut a = Annotation::new();
            for kv in line.split('\t').skip(1).filter(|s| !s.is_empty()) {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                a.insert(k.to_string(), unescape(v));
            }
            annotations.push(a);
        }
    }
    Ok(Split { name: name.to_string(), samples, annotations })
}
