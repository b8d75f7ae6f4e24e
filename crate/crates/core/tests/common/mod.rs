#![allow(dead_code)]

pub mod objectives;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqvi::autodiff::activations::softplus_inv;
use seqvi::distributions::{DiagGaussian, GaussMixture};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Diagonal Gaussian with means in [-1, 1] and σ in [0.3, 1.5].
pub fn random_gaussian(rng: &mut impl Rng, n: usize) -> DiagGaussian {
    let mu = uniform_vec(rng, n, -1.0, 1.0);
    let rho = (0..n).map(|_| softplus_inv(rng.random_range(0.3..1.5))).collect();
    DiagGaussian::new(mu, rho).unwrap()
}

pub fn random_mixture(rng: &mut impl Rng, k: usize, n: usize) -> GaussMixture {
    let lambda = uniform_vec(rng, k, -1.0, 1.0);
    let comps = (0..k).map(|_| random_gaussian(rng, n)).collect();
    GaussMixture::new(lambda, comps).unwrap()
}

/// Central differences with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries. Entries
/// below `floor` in magnitude are effectively compared absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
