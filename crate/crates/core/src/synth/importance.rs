use crate::error::{Error, Result};
use crate::model::SOmninet;
use crate::sample::Sample;
use crate::{Tape, Var};

/// Per-word and per-region importance of one sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportanceScores {
    pub words: Vec<f64>,
    pub regions: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Important {
    pub words: Vec<Scored>,
    pub regions: Vec<Scored>,
}

/// The `n` highest scores; ties go to the earliest index. Asking for more
/// than are available returns all of them.
pub fn top_scored(scores: &[f64], n: usize) -> Vec<Scored> {
    let mut all: Vec<Scored> = scores.iter().enumerate().map(|(index, &score)| Scored { index, score }).collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    all.truncate(n);
    all
}

/// Top `p` words and top `q` regions.
pub fn extract_important(scores: &ImportanceScores, p: usize, q: usize) -> Important {
    Important { words: top_scored(&scores.words, p), regions: top_scored(&scores.regions, q) }
}

/// Element-wise mean of equally shaped attention weights, flattened.
pub fn mean_weights(tape: &Tape<'_>, weights: &[Vec<Var>]) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0;
    for &w in weights.iter().flatten() {
        let v = tape.value(w);
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n.max(1) as f64).collect()
}

/// Source of importance scores for a sample.
pub trait ImportanceProvider {
    fn scores(&self, index: usize, sample: &Sample) -> Result<ImportanceScores>;
}

/// Ground truth known to the generator, looked up by record index.
pub struct OracleProvider {
    pub scores: Vec<ImportanceScores>,
}

impl ImportanceProvider for OracleProvider {
    fn scores(&self, index: usize, _sample: &Sample) -> Result<ImportanceScores> {
        self.scores.get(index).cloned().ok_or_else(|| Error::Index(format!("no oracle scores for record {index}")))
    }
}

/// Decoder attention of a trained model, averaged over layers and heads.
/// A word scores the attention mass on its tokens; regions are patches.
pub struct AttentionProvider<'m> {
    pub model: &'m SOmninet,
}

impl ImportanceProvider for AttentionProvider<'_> {
    fn scores(&self, _index: usize, sample: &Sample) -> Result<ImportanceScores> {
        let p = self.model.prepare(sample)?;
        let mut tape = Tape::with_params(&self.model.store);
        let out = self.model.forward(&mut tape, &p, false)?;
        let text = mean_weights(&tape, &out.decode.text_weights);
        let regions = mean_weights(&tape, &out.decode.spatial_weights);
        let mut words = Vec::new();
        if let Some(t) = &sample.text {
            let mut next = 0;
            for pieces in self.model.tokenizer.tokenize_words(t) {
                words.push(text.get(next..next + pieces.len()).map_or(0.0, |w| w.iter().sum()));
                next += pieces.len();
            }
        }
        Ok(ImportanceScores { words, regions })
    }
}
