//! Central-difference gradient checking.
//!
//! The relative error of one coordinate is
//! `|autodiff − central| / max(|autodiff|, |central|, 1e-8)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `f(theta)` at every coordinate of `theta`. Returns the maximum
/// relative error.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'static>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let zeros = vec![0.0; theta.numel()];
    let analytic = grads.wrt(x).unwrap_or(&zeros).to_vec();

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let l = f(&mut tape, x)?;
        Ok(tape.value(l)[0])
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.numel() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += eps;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Gradient check over parameters of a store. `per_param` coordinates are
/// probed at random (seeded) in each trainable parameter, or all of them
/// when the parameter is smaller.
pub fn grad_check_params<F>(store: &ParamStore, loss_fn: F, eps: f64, per_param: usize, seed: u64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = loss_fn(&mut tape)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = store
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(id, e)| (id, grads.param(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; e.value.numel()])))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let l = loss_fn(&mut tape)?;
        Ok(tape.value(l)[0])
    };
    let mut probes = Vec::new();
    for (id, g) in analytic {
        let n = g.len();
        let coords: Vec<usize> = if n <= per_param { (0..n).collect() } else { sample(&mut rng, n, per_param).into_vec() };
        for c in coords {
            let orig = work.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            probes.push(ProbeResult {
                param: store.entry(id).name.clone(),
                coord: c,
                analytic: g[c],
                numeric,
                rel_error: relative_error(g[c], numeric),
            });
        }
    }
    Ok(GradCheckReport { probes })
}
