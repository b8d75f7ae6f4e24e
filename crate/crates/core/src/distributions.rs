//! Variational families over network parameters and their KL divergences.
//!
//! Scales are stored as modified standard deviations ρ with σ = softplus(ρ),
//! so optimisation is unconstrained. Plain functions work on values; the
//! [`tape`] submodule has differentiable counterparts used inside training
//! objectives.

use rand::Rng;

use crate::autodiff::activations::{log_sum_exp, softmax, softplus_inv, softplus_scalar};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{gumbel_vec, normal_vec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default Gumbel-softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::contract(format!(
                "mu has {} entries but rho has {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(DiagGaussian { mu, rho })
    }

    pub fn from_sigma(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::domain(format!("standard deviation {s} is not positive")));
        }
        DiagGaussian::new(mu, sigma.iter().map(|&s| softplus_inv(s)).collect())
    }

    /// N(0, I) in dimension `n`.
    pub fn standard(n: usize) -> Self {
        DiagGaussian {
            mu: vec![0.0; n],
            rho: vec![softplus_inv(1.0); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus_scalar(r)).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.sigma().iter().map(|s| s * s).collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(theta)
            .map(|((&m, &r), &t)| {
                let s = softplus_scalar(r);
                let z = (t - m) / s;
                -0.5 * (LN_2PI + z * z) - s.ln()
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = normal_vec(rng, self.dim());
        sample_gaussian(self, &z).expect("noise has matching length")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussMixture {
    lambda: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl GaussMixture {
    pub fn new(lambda: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::contract("a mixture needs at least one component"));
        }
        if lambda.len() != components.len() {
            return Err(Error::contract(format!(
                "{} mixing logits for {} components",
                lambda.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::contract("mixture components differ in dimension"));
        }
        Ok(GaussMixture { lambda, components })
    }

    /// `k` identical N(0, I) components with uniform mixing.
    pub fn standard(k: usize, n: usize) -> Self {
        GaussMixture {
            lambda: vec![0.0; k],
            components: vec![DiagGaussian::standard(n); k],
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    /// Mixing probabilities softmax(λ).
    pub fn probs(&self) -> Vec<f64> {
        softmax(&Tensor::vector(self.lambda.clone())).into_data()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let p = self.probs();
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&p)
            .map(|(c, &pk)| pk.max(PROB_FLOOR).ln() + c.log_density(theta))
            .collect();
        log_sum_exp(&terms)
    }

    /// Exact draw: pick a component by its probability, then sample it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = normal_vec(rng, self.dim());
        let kappa = if self.k() == 1 {
            0
        } else {
            categorical(&self.probs(), rng.random::<f64>())
        };
        sample_gaussian(&self.components[kappa], &z).expect("noise has matching length")
    }
}

/// Index whose cumulative probability first exceeds `u`.
pub(crate) fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// A relaxed one-hot point on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSoftmaxSample {
    pub weights: Vec<f64>,
    pub temperature: f64,
}

/// θ = μ + softplus(ρ) ⊙ z.
pub fn sample_gaussian(d: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != d.dim() {
        return Err(Error::contract(format!(
            "noise has {} entries, distribution has dimension {}",
            noise.len(),
            d.dim()
        )));
    }
    Ok(d.mu
        .iter()
        .zip(&d.rho)
        .zip(noise)
        .map(|((&m, &r), &z)| m + softplus_scalar(r) * z)
        .collect())
}

/// softmax((λ + g) / T).
pub fn sample_gumbel_softmax(
    lambda: &[f64],
    temperature: f64,
    gumbel: &[f64],
) -> Result<GumbelSoftmaxSample> {
    if !(temperature > 0.0) {
        return Err(Error::domain(format!("temperature {temperature} must be positive")));
    }
    if lambda.len() != gumbel.len() {
        return Err(Error::contract("lambda and gumbel noise differ in length"));
    }
    let scaled: Vec<f64> = lambda
        .iter()
        .zip(gumbel)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    Ok(GumbelSoftmaxSample {
        weights: softmax(&Tensor::vector(scaled)).into_data(),
        temperature,
    })
}

/// Convex combination of per-component reparameterised draws, weighted by a
/// Gumbel-softmax sample. `noise[κ]` is the standard-normal draw for
/// component κ.
pub fn sample_mixture(
    m: &GaussMixture,
    temperature: f64,
    noise: &[Vec<f64>],
    gumbel: &[f64],
) -> Result<Vec<f64>> {
    if noise.len() != m.k() {
        return Err(Error::contract(format!(
            "{} noise vectors for {} components",
            noise.len(),
            m.k()
        )));
    }
    let w = sample_gumbel_softmax(&m.lambda, temperature, gumbel)?;
    let mut theta = vec![0.0; m.dim()];
    for ((c, z), &wk) in m.components.iter().zip(noise).zip(&w.weights) {
        for (t, s) in theta.iter_mut().zip(sample_gaussian(c, z)?) {
            *t += wk * s;
        }
    }
    Ok(theta)
}

/// KL(N(mq, vq) ‖ N(mp, vp)) for diagonal Gaussians given means and variances.
pub fn kl_gaussian_moments(mq: &[f64], vq: &[f64], mp: &[f64], vp: &[f64]) -> Result<f64> {
    let n = mq.len();
    if vq.len() != n || mp.len() != n || vp.len() != n {
        return Err(Error::contract("moment vectors differ in length"));
    }
    if let Some(v) = vp.iter().chain(vq).find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("variance {v} is not positive")));
    }
    Ok(0.5
        * (0..n)
            .map(|i| {
                let d = mq[i] - mp[i];
                (vp[i] / vq[i]).ln() - 1.0 + (vq[i] + d * d) / vp[i]
            })
            .sum::<f64>())
}

pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::contract(format!(
            "dimension mismatch {} vs {}",
            q.dim(),
            p.dim()
        )));
    }
    kl_gaussian_moments(&q.mu, &q.variance(), &p.mu, &p.variance())
}

/// Σ p_t ln(p_t / p_prev), with probabilities clamped at [`PROB_FLOOR`].
pub fn kl_categorical(p_t: &[f64], p_prev: &[f64]) -> Result<f64> {
    if p_t.len() != p_prev.len() {
        return Err(Error::contract("probability vectors differ in length"));
    }
    for p in [p_t, p_prev] {
        if p.iter().any(|&x| !(0.0..=1.0 + 1e-9).contains(&x))
            || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6
        {
            return Err(Error::domain(format!("{p:?} is not on the simplex")));
        }
    }
    if p_t.iter().zip(p_prev).any(|(&a, &b)| a > 0.0 && b == 0.0) {
        return Err(Error::domain(
            "current PMF puts mass where the previous PMF has none",
        ));
    }
    Ok(p_t
        .iter()
        .zip(p_prev)
        .map(|(&a, &b)| {
            let a_c = a.max(PROB_FLOOR);
            a * (a_c.ln() - b.max(PROB_FLOOR).ln())
        })
        .sum())
}

fn check_pair(q_t: &GaussMixture, q_prev: &GaussMixture) -> Result<()> {
    if q_t.k() != q_prev.k() || q_t.dim() != q_prev.dim() {
        return Err(Error::contract(format!(
            "mixtures differ: k {} vs {}, dim {} vs {}",
            q_t.k(),
            q_prev.k(),
            q_t.dim(),
            q_prev.dim()
        )));
    }
    Ok(())
}

/// Closed-form upper bound on the mixture KL: the categorical KL plus the
/// current-probability-weighted component KLs.
pub fn kl_mixture_upper_bound(q_t: &GaussMixture, q_prev: &GaussMixture) -> Result<f64> {
    check_pair(q_t, q_prev)?;
    let p = q_t.probs();
    let mut kl = kl_categorical(&p, &q_prev.probs())?;
    for ((a, b), pk) in q_t.components.iter().zip(&q_prev.components).zip(&p) {
        kl += pk * kl_diag_gaussian(a, b)?;
    }
    Ok(kl)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Mean of ln q_t(θ) − ln q_prev(θ) over exact draws θ ~ q_t.
pub fn kl_mixture_mc<R: Rng + ?Sized>(
    q_t: &GaussMixture,
    q_prev: &GaussMixture,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_pair(q_t, q_prev)?;
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    let xs: Vec<f64> = (0..n_samples)
        .map(|_| {
            let theta = q_t.sample(rng);
            q_t.log_density(&theta) - q_prev.log_density(&theta)
        })
        .collect();
    Ok(McEstimate::from_samples(&xs))
}

/// Per-component standard-normal noise and Gumbel noise for one mixture draw.
pub fn mixture_noise<R: Rng + ?Sized>(
    noise_rng: &mut R,
    gumbel_rng: &mut R,
    k: usize,
    n: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let z = (0..k).map(|_| normal_vec(noise_rng, n)).collect();
    (z, gumbel_vec(gumbel_rng, k))
}

/// Differentiable versions of the samplers and divergences.
pub mod tape {
    use super::*;
    use crate::autodiff::{Graph, Var};

    /// Variational parameters of a diagonal Gaussian on a tape.
    #[derive(Clone, Copy, Debug)]
    pub struct GaussianVars<'g> {
        pub mu: Var<'g>,
        pub rho: Var<'g>,
    }

    impl<'g> GaussianVars<'g> {
        pub fn constant(g: &'g Graph, d: &DiagGaussian) -> Self {
            GaussianVars {
                mu: g.vector(d.mu.clone()),
                rho: g.vector(d.rho.clone()),
            }
        }

        pub fn sigma(&self) -> Var<'g> {
            self.rho.softplus()
        }

        pub fn variance(&self) -> Var<'g> {
            self.sigma().square()
        }
    }

    #[derive(Clone, Debug)]
    pub struct MixtureVars<'g> {
        pub lambda: Var<'g>,
        pub components: Vec<GaussianVars<'g>>,
    }

    impl<'g> MixtureVars<'g> {
        pub fn constant(g: &'g Graph, m: &GaussMixture) -> Self {
            MixtureVars {
                lambda: g.vector(m.lambda.clone()),
                components: m
                    .components
                    .iter()
                    .map(|c| GaussianVars::constant(g, c))
                    .collect(),
            }
        }

        pub fn k(&self) -> usize {
            self.components.len()
        }

        pub fn log_probs(&self) -> Var<'g> {
            self.lambda.log_softmax()
        }
    }

    pub fn sample_gaussian<'g>(q: &GaussianVars<'g>, noise: &[f64]) -> Var<'g> {
        let z = q.mu.graph().vector(noise.to_vec());
        q.mu + q.sigma() * z
    }

    pub fn gumbel_softmax<'g>(lambda: Var<'g>, temperature: f64, gumbel: &[f64]) -> Var<'g> {
        let g = lambda.graph().vector(gumbel.to_vec());
        ((lambda + g) * (1.0 / temperature)).softmax()
    }

    pub fn sample_mixture<'g>(
        q: &MixtureVars<'g>,
        temperature: f64,
        noise: &[Vec<f64>],
        gumbel: &[f64],
    ) -> Var<'g> {
        let w = gumbel_softmax(q.lambda, temperature, gumbel);
        q.components
            .iter()
            .zip(noise)
            .enumerate()
            .map(|(i, (c, z))| sample_gaussian(c, z) * w.at(i))
            .reduce(|a, b| a + b)
            .expect("at least one component")
    }

    /// Diagonal Gaussian KL from means and variances.
    pub fn kl_gaussian_moments<'g>(
        mq: Var<'g>,
        vq: Var<'g>,
        mp: Var<'g>,
        vp: Var<'g>,
    ) -> Var<'g> {
        let d = mq - mp;
        ((vp / vq).ln() - 1.0 + (vq + d.square()) / vp).sum() * 0.5
    }

    pub fn kl_diag_gaussian<'g>(q: &GaussianVars<'g>, p: &GaussianVars<'g>) -> Var<'g> {
        kl_gaussian_moments(q.mu, q.variance(), p.mu, p.variance())
    }

    /// Categorical KL with the current PMF given as logits.
    pub fn kl_categorical<'g>(lambda_t: Var<'g>, lambda_prev: Var<'g>) -> Var<'g> {
        let lp_t = lambda_t.log_softmax();
        let lp_prev = lambda_prev
            .log_softmax()
            .clamp_min(PROB_FLOOR.ln());
        (lp_t.exp() * (lp_t - lp_prev)).sum()
    }

    pub fn kl_mixture_upper_bound<'g>(q_t: &MixtureVars<'g>, q_prev: &MixtureVars<'g>) -> Var<'g> {
        let p = q_t.log_probs().exp();
        let mut kl = kl_categorical(q_t.lambda, q_prev.lambda);
        for (i, (a, b)) in q_t.components.iter().zip(&q_prev.components).enumerate() {
            kl = kl + p.at(i) * kl_diag_gaussian(a, b);
        }
        kl
    }

    fn log_normal<'g>(theta: Var<'g>, c: &GaussianVars<'g>) -> Var<'g> {
        let s = c.sigma();
        let n = theta.value().numel() as f64;
        let z = (theta - c.mu) / s;
        (z.square().sum() + LN_2PI * n) * -0.5 - s.ln().sum()
    }

    /// Mixture log-density via log-sum-exp over components.
    pub fn mixture_log_density<'g>(q: &MixtureVars<'g>, theta: Var<'g>) -> Var<'g> {
        let k = q.k();
        let lp = q.log_probs();
        let terms = q
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| (lp.at(i) + log_normal(theta, c)).pad(i, k))
            .reduce(|a, b| a + b)
            .expect("at least one component");
        // lse(v) = v_0 − log_softmax(v)_0
        terms.at(0) - terms.log_softmax().at(0)
    }

    /// Monte Carlo mixture KL over relaxed draws from `q_t`.
    pub fn kl_mixture_mc<'g>(
        q_t: &MixtureVars<'g>,
        q_prev: &MixtureVars<'g>,
        temperature: f64,
        draws: &[(Vec<Vec<f64>>, Vec<f64>)],
    ) -> Var<'g> {
        let total = draws
            .iter()
            .map(|(z, g)| {
                let theta = sample_mixture(q_t, temperature, z, g);
                mixture_log_density(q_t, theta) - mixture_log_density(q_prev, theta)
            })
            .reduce(|a, b| a + b)
            .expect("at least one draw");
        total * (1.0 / draws.len() as f64)
    }
}
