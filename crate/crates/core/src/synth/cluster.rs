use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::numeric::{nearest_centroid, squared_distance};
use crate::error::{Error, Result};
use crate::peripherals::structured::CategoricalFeature;
use crate::peripherals::StructuredSchema;

pub const KMEANS_ITERATIONS: usize = 20;

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub warning: Option<String>,
}

/// Seeded k-means: farthest-point initialization from a random first point,
/// then a fixed number of Lloyd iterations. Requests for more clusters than
/// distinct points are reduced with a warning.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Result<KMeans> {
    if points.is_empty() || k == 0 {
        return Err(Error::Synth("k-means needs at least one point and one cluster".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| *q == p) {
            distinct.push(p);
        }
    }
    let mut warning = None;
    let k = if distinct.len() < k {
        warning = Some(format!("only {} distinct elements for {k} clusters; using {}", distinct.len(), distinct.len()));
        distinct.len()
    } else {
        k
    };
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for (i, d) in nearest.iter().enumerate() {
            if *d > nearest[far] {
                far = i;
            }
        }
        let c = points[far].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
    for _ in 0..iterations {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans { centroids, assignments, warning })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ElementKind {
    Region,
    Word,
}

/// An important word or region of one sample.
#[derive(Clone, Debug)]
pub struct Element {
    pub sample: usize,
    pub kind: ElementKind,
    /// Identity of the element type: the word, or a region descriptor.
    pub key: String,
    pub embedding: Vec<f64>,
    pub score: f64,
}

/// Number of features built from each element kind and the sub-cluster
/// count per feature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePlan {
    pub spatial: usize,
    pub text: usize,
    pub states: usize,
}

impl Default for FeaturePlan {
    fn default() -> Self {
        Self { spatial: 1, text: 4, states: 4 }
    }
}

#[derive(Clone, Debug)]
pub struct ClusteredFeatures {
    pub schema: StructuredSchema,
    pub kinds: Vec<ElementKind>,
    /// Per sample, per feature state index (0 = EMPTY).
    pub values: Vec<Vec<usize>>,
    /// Element key to (feature, state).
    pub lookup: BTreeMap<String, (usize, usize)>,
    pub warnings: Vec<String>,
}

impl ClusteredFeatures {
    pub fn empty_rate(&self) -> f64 {
        let cells: usize = self.values.iter().map(Vec::len).sum();
        let empty = self.values.iter().flatten().filter(|&&v| v == 0).count();
        if cells == 0 {
            0.0
        } else {
            empty as f64 / cells as f64
        }
    }
}

fn unique_types(elements: &[Element], kind: ElementKind) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut seen = BTreeMap::new();
    for e in elements.iter().filter(|e| e.kind == kind) {
        seen.entry(e.key.clone()).or_insert_with(|| e.embedding.clone());
    }
    seen.into_iter().unzip()
}

/// Clusters element types of each kind into features, sub-clusters each
/// feature into categories, and assigns every sample the category of its
/// highest-scoring element per feature (ties go to the earliest element),
/// or EMPTY when it has none.
pub fn cluster_features(elements: &[Element], n_samples: usize, plan: FeaturePlan, numeric_dim: usize, rng: &mut ChaCha8Rng) -> Result<ClusteredFeatures> {
    let mut features = Vec::new();
    let mut kinds = Vec::new();
    let mut lookup = BTreeMap::new();
    let mut warnings = Vec::new();
    for (kind, count, prefix) in [(ElementKind::Region, plan.spatial, "spatial"), (ElementKind::Word, plan.text, "text")] {
        if count == 0 {
            continue;
        }
        let (keys, points) = unique_types(elements, kind);
        if keys.is_empty() {
            return Err(Error::Synth(format!("no {prefix} elements to cluster")));
        }
        let top = kmeans(&points, count, KMEANS_ITERATIONS, rng)?;
        warnings.extend(top.warning);
        for c in 0..top.centroids.len() {
            let members: Vec<usize> = (0..keys.len()).filter(|&i| top.assignments[i] == c).collect();
            if members.is_empty() {
                warnings.push(format!("{prefix} feature {c} has no members; skipped"));
                continue;
            }
            let sub_points: Vec<Vec<f64>> = members.iter().map(|&i| points[i].clone()).collect();
            let sub = kmeans(&sub_points, plan.states, KMEANS_ITERATIONS, rng)?;
            warnings.extend(sub.warning);
            let feature = features.len();
            for (m, &i) in members.iter().enumerate() {
                lookup.insert(keys[i].clone(), (feature, sub.assignments[m] + 1));
            }
            let n_states = sub.centroids.len();
            let states = std::iter::once("EMPTY".to_string()).chain((1..=n_states).map(|s| format!("c{s}"))).collect();
            features.push(CategoricalFeature { name: format!("{prefix}{}", kinds.iter().filter(|k| **k == kind).count()), states });
            kinds.push(kind);
        }
    }
    let mut values = vec![vec![0usize; features.len()]; n_samples];
    let mut best = vec![vec![f64::NEG_INFINITY; features.len()]; n_samples];
    for e in elements {
        if e.sample >= n_samples {
            return Err(Error::Synth(format!("element for sample {} of {n_samples}", e.sample)));
        }
        let (f, s) = lookup[&e.key];
        if e.score > best[e.sample][f] {
            best[e.sample][f] = e.score;
            values[e.sample][f] = s;
        }
    }
    let schema = StructuredSchema { features, numeric_dim };
    schema.validate()?;
    Ok(ClusteredFeatures { schema, kinds, values, lookup, warnings })
}
