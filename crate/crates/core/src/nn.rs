//! Fully connected networks over a flat parameter vector.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::activations::{sigmoid_scalar, softmax};
use crate::autodiff::{self, Graph, Tensor, Var};
use crate::distributions::{DiagGaussian, GaussMixture};
use crate::error::{Error, Result};
use crate::rng::normal_vec;

/// Default number of posterior draws for model averaging.
pub const DEFAULT_PREDICTION_SAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Swish,
}

/// Output head. A single logit is read as a binary (sigmoid) head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Multiclass,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcnnSpec {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    hidden_activation: Activation,
    layers: Vec<LayerSlice>,
}

/// Where one dense layer lives inside the flat parameter vector. Weights
/// are stored `fan_in × fan_out`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlice {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl FcnnSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::contract("layer widths must be at least 1"));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output_dim))
            .collect();
        let mut offset = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerSlice {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(FcnnSpec {
            input_dim,
            hidden,
            output_dim,
            hidden_activation: Activation::Swish,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn layers(&self) -> &[LayerSlice] {
        &self.layers
    }

    /// Σ (fan_in + 1)·fan_out over layers.
    pub fn num_params(&self) -> usize {
        self.layers.last().map(|l| l.bias.end).unwrap_or(0)
    }

    pub fn head(&self) -> Head {
        if self.output_dim == 1 {
            Head::Binary
        } else {
            Head::Multiclass
        }
    }

    /// Number of predictive classes (2 for a binary head).
    pub fn num_classes(&self) -> usize {
        match self.head() {
            Head::Binary => 2,
            Head::Multiclass => self.output_dim,
        }
    }

    /// Layer widths as a flat list, `[input, hidden.., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("need at least input and output widths"));
        }
        FcnnSpec::new(
            widths[0],
            widths[1..widths.len() - 1].to_vec(),
            widths[widths.len() - 1],
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.input_dim {
            return Err(Error::contract(format!(
                "input batch of shape {:?} does not have {} columns",
                x.shape(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, network needs {}",
                theta.len(),
                self.num_params()
            )));
        }
        Ok(())
    }
}

/// Network parameters with the layer registry they are laid out by.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    registry: Vec<LayerSlice>,
}

impl ParamVector {
    pub fn new(spec: &FcnnSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_theta(&values)?;
        Ok(ParamVector {
            values,
            registry: spec.layers.clone(),
        })
    }

    pub fn zeros(spec: &FcnnSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.num_params()],
            registry: spec.layers.clone(),
        }
    }

    /// He-style init: weights ~ N(0, 2/fan_in), zero biases.
    pub fn he_init<R: Rng + ?Sized>(spec: &FcnnSpec, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.num_params()];
        for layer in &spec.layers {
            let scale = (2.0 / layer.fan_in as f64).sqrt();
            let z = normal_vec(rng, layer.weights.len());
            for (v, z) in values[layer.weights.clone()].iter_mut().zip(z) {
                *v = scale * z;
            }
        }
        ParamVector {
            values,
            registry: spec.layers.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn registry(&self) -> &[LayerSlice] {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Logits on the tape for a batch `x` of shape `[batch, input_dim]`.
pub fn forward_var<'g>(spec: &FcnnSpec, theta: Var<'g>, x: Var<'g>) -> Var<'g> {
    let batch = x.value().rows();
    let mut h = x;
    let last = spec.layers.len() - 1;
    for (i, layer) in spec.layers.iter().enumerate() {
        let w = theta
            .slice(layer.weights.start, layer.weights.len())
            .reshape(&[layer.fan_in, layer.fan_out]);
        let b = theta.slice(layer.bias.start, layer.fan_out);
        let z = h.matmul(w) + b.broadcast_rows(batch);
        h = if i == last { z } else { z.swish() };
    }
    h
}

/// Logits (no final activation) for a batch, `[batch, output_dim]`.
pub fn forward(spec: &FcnnSpec, theta: &[f64], x: &Tensor) -> Result<Tensor> {
    spec.check_input(x)?;
    spec.check_theta(theta)?;
    let mut h = x.clone();
    let last = spec.layers.len() - 1;
    for (i, layer) in spec.layers.iter().enumerate() {
        let w = Tensor::from_parts(
            vec![layer.fan_in, layer.fan_out],
            theta[layer.weights.clone()].to_vec(),
        );
        let mut z = autodiff::matmul(&h, &w);
        let bias = &theta[layer.bias.clone()];
        for row in z.data_mut().chunks_mut(layer.fan_out) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        h = if i == last {
            z
        } else {
            z.map(|v| v * sigmoid_scalar(v))
        };
    }
    Ok(h)
}

/// `output_dim × num_params` Jacobian of the logits at one input.
pub fn param_jacobian(spec: &FcnnSpec, theta: &[f64], x: &[f64]) -> Result<Tensor> {
    spec.check_theta(theta)?;
    if x.len() != spec.input_dim {
        return Err(Error::contract(format!(
            "input has {} features, network expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let input = Tensor::from_parts(vec![1, x.len()], x.to_vec());
    autodiff::jacobian(
        |t, xv| forward_var(spec, t, xv),
        &Tensor::vector(theta.to_vec()),
        &input,
    )
}

/// Class probabilities from logits: softmax rows, or `[1 − σ, σ]` for a
/// binary head.
pub fn predictive_probs(head: Head, logits: &Tensor) -> Tensor {
    match head {
        Head::Multiclass => softmax(logits),
        Head::Binary => {
            let data = logits
                .data()
                .iter()
                .flat_map(|&z| {
                    let p = sigmoid_scalar(z);
                    [1.0 - p, p]
                })
                .collect();
            Tensor::from_parts(vec![logits.rows(), 2], data)
        }
    }
}

/// What predictions average over: a point estimate or a variational PDF.
#[derive(Clone, Debug, PartialEq)]
pub enum Posterior {
    Point(Vec<f64>),
    Gaussian(DiagGaussian),
    Mixture(GaussMixture),
}

impl Posterior {
    pub fn dim(&self) -> usize {
        match self {
            Posterior::Point(t) => t.len(),
            Posterior::Gaussian(g) => g.dim(),
            Posterior::Mixture(m) => m.dim(),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Posterior::Point(_))
    }

    /// One parameter draw. A point estimate consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Posterior::Point(t) => t.clone(),
            Posterior::Gaussian(g) => g.sample(rng),
            Posterior::Mixture(m) => m.sample(rng),
        }
    }

    /// Flat view of all variational parameters, for the optimiser.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Posterior::Point(t) => t.clone(),
            Posterior::Gaussian(g) => [g.mu(), g.rho()].concat(),
            Posterior::Mixture(m) => {
                let mut v = m.lambda().to_vec();
                for c in m.components() {
                    v.extend_from_slice(c.mu());
                    v.extend_from_slice(c.rho());
                }
                v
            }
        }
    }

    /// Inverse of [`Posterior::to_flat`], keeping this posterior's layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Posterior> {
        if flat.len() != self.to_flat().len() {
            return Err(Error::contract("flat parameter length mismatch"));
        }
        Ok(match self {
            Posterior::Point(_) => Posterior::Point(flat.to_vec()),
            Posterior::Gaussian(g) => {
                let n = g.dim();
                Posterior::Gaussian(DiagGaussian::new(flat[..n].to_vec(), flat[n..].to_vec())?)
            }
            Posterior::Mixture(m) => {
                let (k, n) = (m.k(), m.dim());
                let comps = (0..k)
                    .map(|i| {
                        let base = k + 2 * n * i;
                        DiagGaussian::new(
                            flat[base..base + n].to_vec(),
                            flat[base + n..base + 2 * n].to_vec(),
                        )
                    })
                    .collect::<Result<_>>()?;
                Posterior::Mixture(GaussMixture::new(flat[..k].to_vec(), comps)?)
            }
        })
    }
}

/// Bayesian model averaging: mean predictive probabilities over
/// `n_samples` posterior draws. Rows sum to one.
pub fn predict_bma<R: Rng + ?Sized>(
    spec: &FcnnSpec,
    posterior: &Posterior,
    x: &Tensor,
    n_samples: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    spec.check_input(x)?;
    if posterior.dim() != spec.num_params() {
        return Err(Error::contract("posterior dimension does not match network"));
    }
    let draws = if posterior.is_point() { 1 } else { n_samples };
    let mut acc: Option<Tensor> = None;
    for _ in 0..draws {
        let theta = posterior.sample(rng);
        let p = predictive_probs(spec.head(), &forward(spec, &theta, x)?);
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                for (s, v) in a.data_mut().iter_mut().zip(p.data()) {
                    *s += v;
                }
                a
            }
        });
    }
    let mut out = acc.expect("at least one draw");
    let inv = 1.0 / draws as f64;
    out.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Row-wise argmax with the lowest index winning ties.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Plain forward on a graph for a constant parameter vector.
pub fn forward_on<'g>(g: &'g Graph, spec: &FcnnSpec, theta: &[f64], x: &Tensor) -> Var<'g> {
    forward_var(spec, g.vector(theta.to_vec()), g.constant(x.clone()))
}
