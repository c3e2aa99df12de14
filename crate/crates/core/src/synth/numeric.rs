use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NumericData {
    pub centroids: Vec<Vec<f64>>,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// `n_c` centroids uniform in `[-1, 1]^dim`.
pub fn centroids(n_c: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n_c).map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

/// One draw from `Normal(centroid, sigma^2 I)`.
pub fn sample_around(centroid: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Synth(format!("sigma {sigma}: {e}")))?;
    Ok(centroid.iter().map(|c| c + noise.sample(rng)).collect())
}

/// `per_class` Gaussian samples around each of `n_c` random centroids,
/// grouped by class.
pub fn gen_numeric(n_c: usize, dim: usize, sigma: f64, per_class: usize, rng: &mut ChaCha8Rng) -> Result<NumericData> {
    if !(sigma > 0.0) {
        return Err(Error::Synth(format!("sigma must be positive, got {sigma}")));
    }
    let centroids = centroids(n_c, dim, rng);
    let mut vectors = Vec::with_capacity(n_c * per_class);
    let mut labels = Vec::with_capacity(n_c * per_class);
    for (k, c) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            vectors.push(sample_around(c, sigma, rng)?);
            labels.push(k);
        }
    }
    Ok(NumericData { centroids, vectors, labels })
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the earliest.
pub fn nearest_centroid(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
