use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::categorical::{major_combinations, perturb_feature, prior_from_majors};
use super::cluster::{cluster_features, ClusteredFeatures, Element, ElementKind, FeaturePlan};
use super::dataset::Annotation;
use super::importance::{extract_important, ImportanceProvider, ImportanceScores, OracleProvider};
use super::numeric::{centroids, sample_around};
use super::scene::{distinct, random_cells, Scene, SceneObject, CELL, COLORS, SHAPES};
use super::tasks::Generated;
use crate::error::{Error, Result};
use crate::peripherals::tokenizer::normalize;
use crate::sample::{Image, Label, Sample, StructuredSample};
use crate::tensor::Precision;

pub const SIZES: [&str; 2] = ["small", "big"];
pub const RELATIONS: [&str; 4] = ["left", "right", "above", "below"];

/// Upper bound on clustering retries when the EMPTY rate is too high.
pub const MAX_EMPTY_RATE: f64 = 0.2;
pub const CLUSTER_ATTEMPTS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGenConfig {
    /// Number of classes; class `k` asks about a `COLORS[k]` object.
    pub n_c: usize,
    pub numeric_dim: usize,
    pub sigma: f64,
    /// Samples per class for standalone numeric generation.
    pub per_class: usize,
    /// Important words kept per text.
    pub words: usize,
    /// Important regions kept per image.
    pub regions: usize,
    pub plan: FeaturePlan,
    /// Dimension of the seeded random word table used for clustering.
    pub embed_dim: usize,
}

impl Default for SyntheticGenConfig {
    fn default() -> Self {
        Self { n_c: 4, numeric_dim: 4, sigma: 0.5, per_class: 100, words: 6, regions: 2, plan: FeaturePlan::default(), embed_dim: 16 }
    }
}

impl SyntheticGenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(2..=COLORS.len()).contains(&self.n_c) {
            problems.push(format!("classes must be in 2..={}", COLORS.len()));
        }
        if !(self.sigma > 0.0) {
            problems.push("sigma must be positive".into());
        }
        if self.plan.spatial + self.plan.text == 0 || self.plan.states == 0 {
            problems.push("feature plan must create at least one feature with one state".into());
        }
        if self.embed_dim == 0 {
            problems.push("embed_dim must be positive".into());
        }
        if problems.is_empty() { Ok(()) } else { Err(Error::Config(problems.join("; "))) }
    }
}

/// One question-answering sample before structured features are attached.
#[derive(Clone, Debug)]
pub struct BaseSample {
    pub image: Image,
    pub text: String,
    pub label: usize,
    pub oracle: ImportanceScores,
}

fn relation(a: (usize, usize), b: (usize, usize), rng: &mut ChaCha8Rng) -> usize {
    let mut options = Vec::new();
    if a.1 < b.1 {
        options.push(0);
    }
    if a.1 > b.1 {
        options.push(1);
    }
    if a.0 < b.0 {
        options.push(2);
    }
    if a.0 > b.0 {
        options.push(3);
    }
    options[rng.random_range(0..options.len())]
}

fn sized(mut o: SceneObject, small: bool) -> SceneObject {
    if small {
        o.extent -= 2;
        o.y += 1;
        o.x += 1;
    }
    o
}

/// "what color is the <size> <shape> <rel> of the <size> <color> <shape> ?"
/// about a `COLORS[label]` referent next to an anchor object.
pub fn base_sample(label: usize, rng: &mut ChaCha8Rng) -> BaseSample {
    let shapes = distinct(rng, SHAPES.len(), 2);
    let anchor_color = (label + rng.random_range(1..COLORS.len())) % COLORS.len();
    let cells = random_cells(rng, 2);
    let sizes = [rng.random_range(0..SIZES.len()), rng.random_range(0..SIZES.len())];
    let rel = relation(cells[0], cells[1], rng);
    let referent = sized(SceneObject::at_cell(shapes[0], label, cells[0]), sizes[0] == 0);
    let anchor = sized(SceneObject::at_cell(shapes[1], anchor_color, cells[1]), sizes[1] == 0);
    let text = format!(
        "what color is the {} {} {} of the {} {} {} ?",
        SIZES[sizes[0]], SHAPES[shapes[0]], RELATIONS[rel], SIZES[sizes[1]], COLORS[anchor_color], SHAPES[shapes[1]]
    );
    let mut words = vec![0.0; normalize(&text).len()];
    for (i, s) in [(5, 1.0), (4, 0.8), (6, 0.7), (11, 0.6), (10, 0.5), (9, 0.4)] {
        words[i] = s;
    }
    let mut regions = vec![0.0; super::scene::GRID * super::scene::GRID];
    regions[Scene::cell_index(cells[0])] = 1.0;
    regions[Scene::cell_index(cells[1])] = 0.6;
    BaseSample { image: Scene::new(vec![referent, anchor]).render(), text, label, oracle: ImportanceScores { words, regions } }
}

/// Seeded random vector per word, independent of the order words are met.
pub fn random_word_embedding(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let h = word.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Pixels of a grid cell, flattened.
pub fn region_embedding(img: &Image, region: usize) -> Vec<f64> {
    let (gy, gx) = (region / super::scene::GRID, region % super::scene::GRID);
    let mut v = Vec::with_capacity(CELL * CELL * img.channels);
    for y in gy * CELL..(gy + 1) * CELL {
        for x in gx * CELL..(gx + 1) * CELL {
            for c in 0..img.channels {
                v.push(img.at(y, x, c));
            }
        }
    }
    v
}

fn region_key(embedding: &[f64]) -> String {
    embedding.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

/// Important elements of every sample under `provider`.
pub fn important_elements(
    bases: &[BaseSample],
    provider: &dyn ImportanceProvider,
    cfg: &SyntheticGenConfig,
    embed_word: &dyn Fn(&str) -> Vec<f64>,
) -> Result<Vec<Element>> {
    let mut elements = Vec::new();
    for (i, b) in bases.iter().enumerate() {
        let sample = Sample { image: Some(b.image.clone()), video: None, text: Some(b.text.clone()), structured: vec![], label: Label::Class(b.label), task_id: 0 };
        let scores = provider.scores(i, &sample)?;
        let imp = extract_important(&scores, cfg.words, cfg.regions);
        let words = normalize(&b.text);
        for w in imp.words {
            let key = words.get(w.index).ok_or_else(|| Error::Index(format!("word {} of {}", w.index, words.len())))?;
            elements.push(Element { sample: i, kind: ElementKind::Word, key: key.clone(), embedding: embed_word(key), score: w.score });
        }
        for r in imp.regions {
            let embedding = region_embedding(&b.image, r.index);
            elements.push(Element { sample: i, kind: ElementKind::Region, key: region_key(&embedding), embedding, score: r.score });
        }
    }
    Ok(elements)
}

/// The structured VQA analogue: question-answer samples whose structured
/// source carries label-correlated numeric features and categorical features
/// clustered from important words and regions, then perturbed towards
/// per-class major categories.
pub fn assemble_svqa(n: usize, cfg: &SyntheticGenConfig, seed: u64) -> Result<(Vec<Generated>, ClusteredFeatures, Vec<String>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<BaseSample> = (0..n).map(|i| base_sample(i % cfg.n_c, &mut rng)).collect();
    let oracle = OracleProvider { scores: bases.iter().map(|b| b.oracle.clone()).collect() };
    let mut warnings = Vec::new();
    let mut clustered = None;
    for attempt in 0..CLUSTER_ATTEMPTS as u64 {
        let embed_seed = seed.wrapping_add(attempt);
        let embed = move |w: &str| random_word_embedding(w, cfg.embed_dim, embed_seed);
        let elements = important_elements(&bases, &oracle, cfg, &embed)?;
        let mut crng = ChaCha8Rng::seed_from_u64(embed_seed);
        let c = cluster_features(&elements, n, cfg.plan, cfg.numeric_dim, &mut crng)?;
        let rate = c.empty_rate();
        if rate < MAX_EMPTY_RATE || attempt + 1 == CLUSTER_ATTEMPTS as u64 {
            if rate >= MAX_EMPTY_RATE {
                warnings.push(format!("EMPTY rate {rate:.3} after {CLUSTER_ATTEMPTS} clusterings"));
            } else if attempt > 0 {
                warnings.push(format!("clustering regenerated {attempt} time(s) to bring the EMPTY rate to {rate:.3}"));
            }
            warnings.extend(c.warnings.iter().cloned());
            clustered = Some(c);
            break;
        }
    }
    let clustered = clustered.expect("at least one clustering attempt");
    let mut values = clustered.values.clone();
    let mut majors = vec![Vec::new(); n];
    for (f, feature) in clustered.schema.features.iter().enumerate() {
        let n_states = feature.states.len() - 1;
        let combos = match major_combinations(n_states, cfg.n_c, seed ^ f as u64) {
            Ok(c) => c,
            Err(e) => {
                warnings.push(format!("feature {} left unperturbed: {e}", feature.name));
                continue;
            }
        };
        for (k, combo) in combos.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| bases[i].label == k).collect();
            let mut column: Vec<usize> = members.iter().map(|&i| values[i][f]).collect();
            perturb_feature(&mut column, n_states, &prior_from_majors(n_states, combo)?, &mut rng)?;
            for (&i, v) in members.iter().zip(column) {
                values[i][f] = v;
            }
            let names: Vec<String> = combo.iter().map(|c| feature.states[c + 1].clone()).collect();
            for &i in &members {
                majors[i].push(format!("{}:{}", feature.name, names.join("+")));
            }
        }
    }
    let cents = centroids(cfg.n_c, cfg.numeric_dim, &mut rng);
    let mut out = Vec::with_capacity(n);
    for (i, b) in bases.into_iter().enumerate() {
        let numeric = sample_around(&cents[b.label], cfg.sigma, &mut rng)?.into_iter().map(|v| Precision::F32.round(v)).collect();
        let mut annotation = Annotation::new();
        let top = |s: &[f64]| super::importance::top_scored(s, 1).first().map_or(String::new(), |t| t.index.to_string());
        annotation.insert("top_word".into(), top(&b.oracle.words));
        annotation.insert("top_region".into(), top(&b.oracle.regions));
        annotation.insert("majors".into(), majors[i].join(" "));
        annotation.insert("unperturbed".into(), clustered.values[i].iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        let sample = Sample {
            image: Some(b.image),
            video: None,
            text: Some(b.text),
            structured: vec![StructuredSample { categorical: values[i].clone(), numeric }],
            label: Label::Class(b.label),
            task_id: 0,
        };
        out.push(Generated { sample, annotation });
    }
    Ok((out, clustered, warnings))
}
