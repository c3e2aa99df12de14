use std::fmt::Write as _;

use somni_core::fusion::{FusionMode, SaOrder};
use somni_core::synth::Annotation;
use somni_core::{Sample, SOmninet, Tape, Tensor};

use crate::data::Corpus;
use crate::error::{HarnessError, Result};
use crate::eval::run_eval;
use crate::metrics::mean_sd;
use crate::run_config::RunConfig;
use crate::train::run_train;

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    /// Mean attention mass from the referent's patch onto the relevant
    /// question in CCA(X_p, X_t); `None` without cross-cache attention.
    pub relevant_mass: Option<f64>,
    /// Mean per-row standard deviation of CCA(X_p, X_t) weights.
    pub row_std: Option<f64>,
    pub params: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub runs: Vec<RunResult>,
}

impl ExperimentReport {
    pub fn variant(&self, name: &str) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.variant == name).collect()
    }

    pub fn accuracies(&self, name: &str) -> Vec<f64> {
        self.variant(name).iter().map(|r| r.accuracy).collect()
    }

    pub fn mean_of(&self, name: &str, f: impl Fn(&RunResult) -> Option<f64>) -> f64 {
        let xs: Vec<f64> = self.variant(name).into_iter().filter_map(f).collect();
        mean_sd(&xs).0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,accuracy,final_loss,relevant_mass,row_std,params\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.runs {
            writeln!(s, "{},{},{},{},{},{},{}", r.variant, r.seed, r.accuracy, r.final_loss, opt(r.relevant_mass), opt(r.row_std), r.params).unwrap();
        }
        s
    }

    /// Mean ± sd table per variant.
    pub fn summary(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !names.contains(&r.variant.as_str()) {
                names.push(&r.variant);
            }
        }
        let mut s = format!("{}\n", self.name);
        for n in names {
            let (m, sd) = mean_sd(&self.accuracies(n));
            let runs = self.variant(n).len();
            write!(s, "  {n:<8} accuracy {m:.4} ± {sd:.4} over {runs} seeds").unwrap();
            let mass = self.mean_of(n, |r| r.relevant_mass);
            if mass.is_finite() {
                write!(s, ", relevant-question mass {mass:.3}").unwrap();
            }
            let std = self.mean_of(n, |r| r.row_std);
            if std.is_finite() {
                write!(s, ", CCA(p,t) row std {std:.4}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn range(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once("..")?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Token span covering words `[a, b)` of `text`.
pub fn token_span(model: &SOmninet, text: &str, words: (usize, usize)) -> (usize, usize) {
    let counts: Vec<usize> = model.tokenizer.tokenize_words(text).iter().map(Vec::len).collect();
    let start = counts[..words.0.min(counts.len())].iter().sum();
    let end = counts[..words.1.min(counts.len())].iter().sum();
    (start, end)
}

/// Head-averaged last-layer maps of one stream for one sample.
pub fn stream_maps(model: &SOmninet, sample: &Sample, stream: &str) -> Result<Vec<Tensor>> {
    let p = model.prepare(sample)?;
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &p, true)?;
    let last = out.fusion.maps.iter().filter(|m| m.stream == stream).map(|m| m.layer).max();
    Ok(out.fusion.maps.into_iter().filter(|m| Some(m.layer) == last && m.stream == stream).map(|m| m.weights).collect())
}

pub fn head_mean(maps: &[Tensor]) -> Option<Tensor> {
    let first = maps.first()?;
    let mut t = Tensor::zeros(first.shape());
    for m in maps {
        for (a, b) in t.data_mut().iter_mut().zip(m.data()) {
            *a += b / maps.len() as f64;
        }
    }
    Some(t)
}

/// Average over samples of the head-averaged last-layer CCA(X_p, X_t) mass
/// that the referent's patch puts on the relevant question's tokens.
pub fn relevant_attention_mass(model: &SOmninet, samples: &[Sample], annotations: &[Annotation]) -> Result<Option<f64>> {
    if model.cfg.fusion == FusionMode::NoCca {
        return Ok(None);
    }
    let mut total = 0.0;
    for (s, a) in samples.iter().zip(annotations) {
        let missing = || HarnessError::Run("two-question annotation lacks relevant_words or target_patch".into());
        let words = a.get("relevant_words").and_then(|w| range(w)).ok_or_else(missing)?;
        let patch: usize = a.get("target_patch").and_then(|p| p.parse().ok()).ok_or_else(missing)?;
        let text = s.text.as_deref().unwrap_or("");
        let (lo, hi) = token_span(model, text, words);
        let m = head_mean(&stream_maps(model, s, "p_t")?).ok_or_else(|| HarnessError::Run("no CCA(p,t) maps retained".into()))?;
        total += m.row(patch)[lo..hi].iter().sum::<f64>();
    }
    Ok(Some(total / samples.len().max(1) as f64))
}

fn row_std(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    (row.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over samples, last-layer heads and rows of the population standard
/// deviation of CCA(X_p, X_t) weights.
pub fn cca_row_std(model: &SOmninet, samples: &[Sample]) -> Result<Option<f64>> {
    if model.cfg.fusion == FusionMode::NoCca {
        return Ok(None);
    }
    let (mut total, mut rows) = (0.0, 0usize);
    for s in samples {
        for m in stream_maps(model, s, "p_t")? {
            for r in 0..m.rows() {
                total += row_std(m.row(r));
                rows += 1;
            }
        }
    }
    Ok(Some(total / rows.max(1) as f64))
}

/// Trains one variant for one seed and measures it on the test split.
pub fn run_variant(name: &str, cfg: &RunConfig, corpus: &Corpus, seed: u64) -> Result<RunResult> {
    let cfg = cfg.clone().with_seed(seed);
    let outcome = run_train(&cfg, corpus, None)?;
    let model = &outcome.model;
    let metrics = run_eval(model, &corpus.test)?;
    let accuracy = metrics.first().map(|m| m.value).ok_or_else(|| HarnessError::Run("empty test split".into()))?;
    Ok(RunResult {
        variant: name.to_string(),
        seed,
        accuracy,
        final_loss: outcome.final_loss,
        relevant_mass: relevant_attention_mass(model, &corpus.test, &corpus.test_annotations)?,
        row_std: cca_row_std(model, &corpus.test)?,
        params: model.count_params(false),
    })
}

fn run_pair(name: &str, variants: [(&str, RunConfig); 2], corpus: &Corpus, seeds: &[u64], progress: &mut dyn FnMut(&RunResult)) -> Result<ExperimentReport> {
    let mut report = ExperimentReport { name: name.to_string(), runs: Vec::new() };
    for &seed in seeds {
        for (variant, cfg) in &variants {
            let r = run_variant(variant, cfg, corpus, seed)?;
            progress(&r);
            report.runs.push(r);
        }
    }
    Ok(report)
}

/// Full model against the ablation without cross-cache attention, where
/// caches meet only in the decoder.
pub fn run_twoquestion_experiment(cfg: &RunConfig, corpus: &Corpus, progress: &mut dyn FnMut(&RunResult)) -> Result<ExperimentReport> {
    let mut full = cfg.clone();
    full.model.fusion = FusionMode::Full;
    let mut ablation = cfg.clone();
    ablation.model.fusion = FusionMode::NoCca;
    run_pair("two-question", [("full", full), ("no-cca", ablation)], corpus, &cfg.seeds, progress)
}

/// Self-attention after cross-cache attention against before it.
pub fn run_sa_order_ablation(cfg: &RunConfig, corpus: &Corpus, progress: &mut dyn FnMut(&RunResult)) -> Result<ExperimentReport> {
    let mut late = cfg.clone();
    late.model.sa_order = SaOrder::Late;
    late.model.fusion = FusionMode::Full;
    let mut early = late.clone();
    early.model.sa_order = SaOrder::Early;
    run_pair("sa-order", [("late", late), ("early", early)], corpus, &cfg.seeds, progress)
}

/// Average over samples of the head-averaged last-layer CCA(X_p, X_s)
/// weight from the object's patch onto the annotated structured entry,
/// returned with the uniform share `1 / N_s` it is compared against.
pub fn structured_attention_share(model: &SOmninet, samples: &[Sample], annotations: &[Annotation]) -> Result<(f64, f64)> {
    let (mut share, mut uniform) = (0.0, 0.0);
    for (s, a) in samples.iter().zip(annotations) {
        let missing = || HarnessError::Run("annotation lacks object_patch or correlated_entry".into());
        let patch: usize = a.get("object_patch").and_then(|p| p.parse().ok()).ok_or_else(missing)?;
        let entry: usize = a.get("correlated_entry").and_then(|p| p.parse().ok()).ok_or_else(missing)?;
        let m = head_mean(&stream_maps(model, s, "p_s")?).ok_or_else(|| HarnessError::Run("no CCA(p,s) maps retained".into()))?;
        share += m.row(patch)[entry];
        uniform += 1.0 / m.cols() as f64;
    }
    let n = samples.len().max(1) as f64;
    Ok((share / n, uniform / n))
}
