//! Function-space view of a Gaussian (mixture) over network parameters.
//!
//! Linearising the network around a component mean μ turns each parameter
//! Gaussian into a Gaussian over outputs at the inducing inputs, with mean
//! f(x; μ) and covariance J Σ Jᵀ. Only the diagonal is kept: covariances
//! across inducing points and across output units are dropped.
//!
//! The diagonal is computed without materialising J. For a dense layer the
//! per-example gradient of output o is `a ⊗ δ_o`, so
//! `Σ_i J²_{o,i} σ_i² = Σ_c (a² · S_W)_c δ²_{o,c} + Σ_c δ²_{o,c} s_b,c`,
//! which is two small matmuls per layer and per output unit. Everything is
//! built on the tape, so the result can be differentiated w.r.t. (μ, ρ).

use crate::autodiff::{swish_derivative, Graph, Tensor, Var};
use crate::distributions::tape::{kl_categorical, kl_gaussian_moments, GaussianVars, MixtureVars};
use crate::distributions::{self, DiagGaussian, GaussMixture};
use crate::error::{Error, Result};
use crate::nn::FcnnSpec;

/// Floor applied to every function-space variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingSource {
    GeneratedUniform,
    SampledFromCoreset,
}

/// Inputs at which function-space divergences are evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    points: Tensor,
    source: InducingSource,
}

impl InducingSet {
    pub fn new(points: Tensor, source: InducingSource) -> Result<Self> {
        if points.rank() != 2 || points.rows() == 0 {
            return Err(Error::contract("an inducing set needs at least one point"));
        }
        Ok(InducingSet { points, source })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn source(&self) -> InducingSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

/// Diagonal Gaussian over the `n_ind · d` inducing outputs, point-major
/// (`index = j·d + o`).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureFunctionMoments {
    pub p: Vec<f64>,
    pub per_component: Vec<FunctionMoments>,
}

/// Mean and diagonalised variance of the linearised outputs on the tape.
///
/// `mu` is the linearisation point, `sigma2` the parameter variances.
pub fn function_moments_var<'g>(
    spec: &FcnnSpec,
    mu: Var<'g>,
    sigma2: Var<'g>,
    x: &Tensor,
) -> (Var<'g>, Var<'g>) {
    let g = mu.graph();
    let b = x.rows();
    let d = spec.output_dim();
    let layers = spec.layers();
    let last = layers.len() - 1;

    let mut acts = vec![g.constant(x.clone())];
    let mut dacts = Vec::with_capacity(last);
    let mut weights = Vec::with_capacity(layers.len());
    let mut logits = None;
    for (i, layer) in layers.iter().enumerate() {
        let w = mu
            .slice(layer.weights.start, layer.weights.len())
            .reshape(&[layer.fan_in, layer.fan_out]);
        let bias = mu.slice(layer.bias.start, layer.fan_out);
        let z = acts[i].matmul(w) + bias.broadcast_rows(b);
        weights.push(w);
        if i == last {
            logits = Some(z);
        } else {
            dacts.push(swish_derivative(z));
            acts.push(z.swish());
        }
    }

    // (a² · S_W) does not depend on the output unit.
    let mut act_var = Vec::with_capacity(layers.len());
    let mut bias_var = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let s2w = sigma2
            .slice(layer.weights.start, layer.weights.len())
            .reshape(&[layer.fan_in, layer.fan_out]);
        act_var.push(acts[i].square().matmul(s2w));
        bias_var.push(
            sigma2
                .slice(layer.bias.start, layer.fan_out)
                .reshape(&[layer.fan_out, 1]),
        );
    }

    let mut var: Option<Var<'g>> = None;
    for o in 0..d {
        let mut onehot = Tensor::zeros(&[b, d]);
        for r in 0..b {
            onehot.data_mut()[r * d + o] = 1.0;
        }
        let onehot = g.constant(onehot);
        let mut delta = onehot;
        let mut acc: Option<Var<'g>> = None;
        for l in (0..layers.len()).rev() {
            let dsq = delta.square();
            let term = (act_var[l] * dsq).sum_cols() + dsq.matmul(bias_var[l]).reshape(&[b]);
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
            if l > 0 {
                delta = delta.matmul(weights[l].t()) * dacts[l - 1];
            }
        }
        let col = acc.expect("at least one layer").broadcast_cols(d) * onehot;
        var = Some(match var {
            Some(v) => v + col,
            None => col,
        });
    }
    let mean = logits.expect("at least one layer").reshape(&[b * d]);
    let var = var
        .expect("at least one output")
        .reshape(&[b * d])
        .clamp_min(VARIANCE_FLOOR);
    (mean, var)
}

/// Moments of one Gaussian component's linearisation on the tape.
pub fn gaussian_moments_var<'g>(
    spec: &FcnnSpec,
    q: &GaussianVars<'g>,
    ind: &InducingSet,
) -> (Var<'g>, Var<'g>) {
    function_moments_var(spec, q.mu, q.variance(), ind.points())
}

fn check_dim(spec: &FcnnSpec, n: usize) -> Result<()> {
    if n != spec.num_params() {
        return Err(Error::contract(format!(
            "distribution has dimension {n}, network has {} parameters",
            spec.num_params()
        )));
    }
    Ok(())
}

fn check_inducing(spec: &FcnnSpec, ind: &InducingSet) -> Result<()> {
    if ind.points().cols() != spec.input_dim() {
        return Err(Error::contract("inducing points do not match the input width"));
    }
    Ok(())
}

pub fn gaussian_function_moments(
    spec: &FcnnSpec,
    q: &DiagGaussian,
    ind: &InducingSet,
) -> Result<FunctionMoments> {
    check_dim(spec, q.dim())?;
    check_inducing(spec, ind)?;
    let g = Graph::new();
    let qv = GaussianVars::constant(&g, q);
    let (m, v) = gaussian_moments_var(spec, &qv, ind);
    Ok(FunctionMoments {
        mean: m.value().data().to_vec(),
        var: v.value().data().to_vec(),
    })
}

/// Per-component moments of the conditional linearisation around each μ_κ.
pub fn mixture_function_moments(
    spec: &FcnnSpec,
    q: &GaussMixture,
    ind: &InducingSet,
) -> Result<MixtureFunctionMoments> {
    let per_component = q
        .components()
        .iter()
        .map(|c| gaussian_function_moments(spec, c, ind))
        .collect::<Result<_>>()?;
    Ok(MixtureFunctionMoments {
        p: q.probs(),
        per_component,
    })
}

/// Closed-form KL between diagonalised inducing-output Gaussians.
pub fn fs_kl_gaussian(cur: &FunctionMoments, prior: &FunctionMoments) -> Result<f64> {
    if cur.mean.len() != prior.mean.len() {
        return Err(Error::contract("function moments differ in dimension"));
    }
    if let Some(v) = prior.var.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("prior variance {v} is not positive")));
    }
    distributions::kl_gaussian_moments(&cur.mean, &cur.var, &prior.mean, &prior.var)
}

/// Categorical KL plus probability-weighted component KLs.
pub fn fs_kl_mixture(cur: &MixtureFunctionMoments, prior: &MixtureFunctionMoments) -> Result<f64> {
    if cur.p.len() != prior.p.len() || cur.per_component.len() != prior.per_component.len() {
        return Err(Error::contract("mixtures differ in number of components"));
    }
    let mut kl = distributions::kl_categorical(&cur.p, &prior.p)?;
    for ((a, b), pk) in cur.per_component.iter().zip(&prior.per_component).zip(&cur.p) {
        kl += pk * fs_kl_gaussian(a, b)?;
    }
    Ok(kl)
}

/// Function-space KL of a Gaussian on the tape against fixed prior moments.
pub fn fs_kl_gaussian_var<'g>(
    spec: &FcnnSpec,
    q: &GaussianVars<'g>,
    prior: &FunctionMoments,
    ind: &InducingSet,
) -> Var<'g> {
    let g = q.mu.graph();
    let (m, v) = gaussian_moments_var(spec, q, ind);
    kl_gaussian_moments(m, v, g.vector(prior.mean.clone()), g.vector(prior.var.clone()))
}

/// Function-space mixture KL upper bound on the tape against fixed prior
/// moments.
pub fn fs_kl_mixture_var<'g>(
    spec: &FcnnSpec,
    q: &MixtureVars<'g>,
    prior: &MixtureFunctionMoments,
    ind: &InducingSet,
) -> Var<'g> {
    let g = q.lambda.graph();
    let prior_logits = g.vector(prior.p.iter().map(|p| p.max(distributions::PROB_FLOOR).ln()).collect());
    let p = q.log_probs().exp();
    let mut kl = kl_categorical(q.lambda, prior_logits);
    for (i, (c, pm)) in q.components.iter().zip(&prior.per_component).enumerate() {
        kl = kl + p.at(i) * fs_kl_gaussian_var(spec, c, pm, ind);
    }
    kl
}
