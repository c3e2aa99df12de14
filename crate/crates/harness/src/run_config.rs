use std::path::PathBuf;

use somni_core::config::{parse_bool, parse_kv, parse_value, render_kv};
use somni_core::synth::{DatasetConfig, ToyTask};
use somni_core::{ModelConfig, Precision};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub precision: Precision,
    /// Seeds model initialization and batch order.
    pub seed: u64,
    /// Most frequent words kept whole by the tokenizer.
    pub vocab: usize,
    /// Whether checkpoints allow attention-map export.
    pub export_attention: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, learning_rate: 1e-3, precision: Precision::F32, seed: 0, vocab: 200, export_attention: true }
    }
}

/// Everything a run needs: model, data and optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Toy tasks generated in memory when `datasets` is empty; one head each.
    pub tasks: Vec<ToyTask>,
    pub data: DatasetConfig,
    /// Datasets on disk, used instead of in-memory generation.
    pub datasets: Vec<PathBuf>,
    pub train: TrainSettings,
    /// Seeds of the multi-seed experiments.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            tasks: vec![ToyTask::TwoQuestion],
            data: DatasetConfig::new(ToyTask::TwoQuestion, 1000, 200, 200, 0),
            datasets: Vec::new(),
            train: TrainSettings::default(),
            seeds: (0..5).collect(),
        }
    }
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> somni_core::Result<Vec<T>> {
    value
        .split(',')
        .map(|v| f(v.trim()).ok_or_else(|| somni_core::Error::Config(format!("`{key}`: bad entry `{v}`"))))
        .collect()
}

impl RunConfig {
    /// Applies one key; `Ok(false)` when no part of the run knows it.
    pub fn set(&mut self, key: &str, value: &str) -> somni_core::Result<bool> {
        let t = &mut self.train;
        match key {
            "tasks" => return Err(somni_core::Error::Config("`tasks`: heads follow from `task`; list toy tasks there".into())),
            "task" => {
                self.tasks = list(key, value, ToyTask::parse)?;
                self.data.task = self.tasks[0];
            }
            "datasets" => self.datasets = value.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            "epochs" => t.epochs = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "precision" => t.precision = Precision::parse(value).ok_or_else(|| somni_core::Error::Config(format!("`precision`: unknown `{value}`")))?,
            "seed" => {
                t.seed = parse_value(key, value)?;
                self.model.seed = t.seed;
            }
            "vocab" => t.vocab = parse_value(key, value)?,
            "export_attention" => t.export_attention = parse_bool(key, value)?,
            "seeds" => self.seeds = list(key, value, |v| v.parse().ok())?,
            _ => return Ok(self.model.set(key, value)? || self.data.set(key, value)?),
        }
        Ok(true)
    }

    /// Problems that make the configuration unusable.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut model = self.model.clone();
        model.tasks = vec![somni_core::TaskSpec::classify("probe", 2)];
        p.extend(model.problems());
        if self.datasets.is_empty() {
            p.extend(self.data.problems());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            p.push("batch_size must be positive".into());
        }
        if !(t.learning_rate > 0.0) {
            p.push("learning_rate must be positive".into());
        }
        if self.seeds.is_empty() {
            p.push("seeds must list at least one seed".into());
        }
        p
    }

    /// Parses `key = value` text, reporting every problem at once.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_kv(text).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        for e in entries {
            match cfg.set(&e.key, &e.value) {
                Ok(true) => {}
                Ok(false) => problems.push(format!("line {}: unknown key `{}`", e.line, e.key)),
                Err(err) => problems.push(format!("line {}: {err}", e.line)),
            }
        }
        if problems.is_empty() {
            problems = cfg.problems();
        }
        if problems.is_empty() { Ok(cfg) } else { Err(HarnessError::Config(problems)) }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut kv: Vec<(String, String)> = Vec::new();
        kv.push(("task".into(), self.tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")));
        kv.push(("seed".into(), t.seed.to_string()));
        if !self.datasets.is_empty() {
            kv.push(("datasets".into(), self.datasets.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")));
        }
        kv.extend(self.model.to_kv().into_iter().filter(|(k, _)| *k != "tasks").map(|(k, v)| (k.to_string(), v)));
        kv.extend(self.data.to_kv().into_iter().filter(|(k, _)| *k != "task").map(|(k, v)| (k.to_string(), v)));
        kv.extend([
            ("epochs".into(), t.epochs.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("learning_rate".into(), t.learning_rate.to_string()),
            ("precision".into(), t.precision.name().to_string()),
            ("vocab".into(), t.vocab.to_string()),
            ("export_attention".into(), t.export_attention.to_string()),
            ("seeds".into(), self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
        ]);
        render_kv(&kv)
    }

    /// Sets the run seed used for model initialization and batch order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.model.seed = seed;
        self
    }
}
