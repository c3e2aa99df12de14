use somni_core::peripherals::{StructuredSchema, Tokenizer};
use somni_core::synth::{assemble_dataset, read_dataset, Annotation, SyntheticDataset};
use somni_core::{Sample, TaskSpec};

use crate::error::{HarnessError, Result};
use crate::run_config::RunConfig;

/// Samples of every configured task, with task ids assigned in task order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub tasks: Vec<TaskSpec>,
    pub schema: Option<StructuredSchema>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub test_annotations: Vec<Annotation>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(HarnessError::Run(format!("unknown split `{name}`"))),
        }
    }

    pub fn tokenizer(&self, vocab: usize) -> Tokenizer {
        Tokenizer::build(self.train.iter().filter_map(|s| s.text.as_deref()), vocab)
    }

    fn merge(&mut self, ds: SyntheticDataset) -> Result<()> {
        let offset = self.tasks.len();
        if let Some(s) = ds.schema {
            match &self.schema {
                Some(existing) if *existing != s => return Err(HarnessError::Run("datasets disagree on the structured schema".into())),
                _ => self.schema = Some(s),
            }
        }
        self.tasks.extend(ds.tasks);
        self.warnings.extend(ds.warnings);
        for split in ds.splits {
            let samples = split.samples.into_iter().map(|mut s| {
                s.task_id += offset;
                s
            });
            match split.name.as_str() {
                "train" => self.train.extend(samples),
                "val" => self.val.extend(samples),
                "test" => {
                    self.test.extend(samples);
                    self.test_annotations.extend(split.annotations);
                }
                other => return Err(HarnessError::Run(format!("unexpected split `{other}`"))),
            }
        }
        Ok(())
    }
}

/// Reads the configured datasets, or generates one per configured toy task.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    if cfg.datasets.is_empty() {
        for (k, &task) in cfg.tasks.iter().enumerate() {
            let mut d = cfg.data.clone();
            d.task = task;
            d.seed = cfg.data.seed.wrapping_add(k as u64);
            corpus.merge(assemble_dataset(&d)?)?;
        }
    } else {
        for path in &cfg.datasets {
            corpus.merge(read_dataset(path, true)?)?;
        }
    }
    Ok(corpus)
}
