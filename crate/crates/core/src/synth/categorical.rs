use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability vector.
pub const SUM_TOL: f64 = 1e-9;
/// Dirichlet concentration scale: draws use `alpha = SHARPNESS * f(k, N)`.
pub const SHARPNESS: f64 = 10.0;
pub const MAJOR_WEIGHT: f64 = 0.8;
pub const MINOR_WEIGHT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Synth("distribution over zero categories".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Synth(format!("negative or non-finite probability in {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Synth(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Synth(format!("weights {weights:?} cannot be normalized")));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    /// Empirical frequencies; uniform when there are no observations.
    pub fn empirical(counts: &[usize]) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Self::uniform(counts.len());
        }
        Self::from_weights(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// `(x + y) / 2`.
    pub fn mix(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Synth(format!("mixing {} with {} categories", self.len(), other.len())));
        }
        Self::new(self.probs.iter().zip(&other.probs).map(|(a, b)| (a + b) / 2.0).collect())
    }
}

/// One Dirichlet draw built from independent Gamma(alpha_i, 1) variates.
pub fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Result<CategoricalDistribution> {
    let mut g = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let dist = Gamma::new(a, 1.0).map_err(|e| Error::Synth(format!("concentration {a}: {e}")))?;
        g.push(dist.sample(rng));
    }
    if g.iter().sum::<f64>() <= 0.0 {
        let top = alpha.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        g[top] = 1.0;
    }
    CategoricalDistribution::from_weights(&g)
}

/// `normalize(0.8 for majors, 0.1 otherwise)` over `n` categories.
pub fn prior_from_majors(n: usize, majors: &[usize]) -> Result<CategoricalDistribution> {
    if let Some(&m) = majors.iter().find(|&&m| m >= n) {
        return Err(Error::Synth(format!("major category {m} out of {n}")));
    }
    let w: Vec<f64> = (0..n).map(|i| if majors.contains(&i) { MAJOR_WEIGHT } else { MINOR_WEIGHT }).collect();
    CategoricalDistribution::from_weights(&w)
}

/// Seeded assignment of distinct major-category combinations to classes for
/// features with `n` categories: a shuffled pool of singletons followed by a
/// shuffled pool of pairs, handed out in order.
pub fn major_combinations(n: usize, classes: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let capacity = n + n * n.saturating_sub(1) / 2;
    if classes > capacity {
        return Err(Error::Synth(format!("{classes} classes exhaust the {capacity} combinations of {n} categories")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    let mut singles: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut pairs: Vec<Vec<usize>> = (0..n).flat_map(|i| (i + 1..n).map(move |j| vec![i, j])).collect();
    singles.shuffle(&mut rng);
    pairs.shuffle(&mut rng);
    Ok(singles.into_iter().chain(pairs).take(classes).collect())
}

/// `f(k, N)`: the prior of class `k` for a feature with `n` categories.
pub fn major_prior(k: usize, n: usize, classes: usize, seed: u64) -> Result<CategoricalDistribution> {
    if k >= classes {
        return Err(Error::Synth(format!("class {k} out of {classes}")));
    }
    prior_from_majors(n, &major_combinations(n, classes, seed)?[k])
}

/// Result of perturbing one feature for one class.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub x: CategoricalDistribution,
    pub y: CategoricalDistribution,
    pub z: CategoricalDistribution,
}

/// Redraws the non-EMPTY values of one class's samples for one feature.
/// `values` hold state indices with 0 = EMPTY and categories `1..=n`;
/// `x` is their empirical distribution, `y ~ Dir(SHARPNESS * prior)` is drawn
/// once, and each non-EMPTY value is replaced i.i.d. from `z = (x + y) / 2`.
pub fn perturb_feature(values: &mut [usize], n: usize, prior: &CategoricalDistribution, rng: &mut ChaCha8Rng) -> Result<Perturbation> {
    if prior.len() != n {
        return Err(Error::Synth(format!("prior over {} categories for a feature with {n}", prior.len())));
    }
    let mut counts = vec![0usize; n];
    for &v in values.iter() {
        match v {
            0 => {}
            v if v <= n => counts[v - 1] += 1,
            v => return Err(Error::Synth(format!("state {v} out of {n}"))),
        }
    }
    let x = CategoricalDistribution::empirical(&counts)?;
    let alpha: Vec<f64> = prior.probs().iter().map(|p| SHARPNESS * p).collect();
    let y = dirichlet(&alpha, rng)?;
    let z = x.mix(&y)?;
    for v in values.iter_mut().filter(|v| **v != 0) {
        *v = 1 + z.sample(rng);
    }
    Ok(Perturbation { x, y, z })
}

/// Mutual information in nats between two discrete variables.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let (na, nb) = (a.iter().max().map_or(0, |m| m + 1), b.iter().max().map_or(0, |m| m + 1));
    let mut joint = vec![0usize; na * nb];
    let (mut pa, mut pb) = (vec![0usize; na], vec![0usize; nb]);
    for i in 0..n {
        joint[a[i] * nb + b[i]] += 1;
        pa[a[i]] += 1;
        pb[b[i]] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            if c > 0 {
                let pij = c as f64 / nf;
                mi += pij * (pij / ((pa[i] as f64 / nf) * (pb[j] as f64 / nf))).ln();
            }
        }
    }
    mi.max(0.0)
}

/// One-sided permutation test of `MI(a, b)` against label shuffles; returns
/// `(observed, p)` with `p = (1 + #{shuffled >= observed}) / (1 + rounds)`.
pub fn mi_permutation_test(a: &[usize], labels: &[usize], rounds: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let observed = mutual_information(a, labels);
    let mut shuffled = labels.to_vec();
    let mut hits = 0;
    for _ in 0..rounds {
        shuffled.shuffle(rng);
        if mutual_information(a, &shuffled) >= observed {
            hits += 1;
        }
    }
    (observed, (1 + hits) as f64 / (1 + rounds) as f64)
}
