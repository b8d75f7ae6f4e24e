//! Dense tensors and reverse-mode differentiation for small networks.

pub mod activations;
mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::swish_derivative;
pub(crate) use tensor::matmul;

use crate::error::{Error, Result};

/// Gradient of a scalar function at `at`.
pub fn grad<F>(f: F, at: &Tensor) -> Result<Tensor>
where
    F: for<'g> Fn(Var<'g>) -> Var<'g>,
{
    let g = Graph::new();
    let x = g.leaf(at.clone());
    let y = f(x);
    if y.value().numel() != 1 {
        return Err(Error::contract(format!(
            "grad needs a scalar-valued function, got shape {:?}",
            y.shape()
        )));
    }
    let dx = g.grad(y, &[x])?[0];
    Ok((*dx.value()).clone())
}

/// Jacobian `∂f_i/∂θ_j` of a vector function of parameters `at`, evaluated
/// at a fixed `input`. Returns a `d × n` matrix, one reverse pass per output.
pub fn jacobian<F>(f: F, at: &Tensor, input: &Tensor) -> Result<Tensor>
where
    F: for<'g> Fn(Var<'g>, Var<'g>) -> Var<'g>,
{
    let g = Graph::new();
    let theta = g.leaf(at.clone());
    let x = g.constant(input.clone());
    let out = f(theta, x);
    let d = out.value().numel();
    let n = at.numel();
    let flat = out.reshape(&[d]);
    let mut data = Vec::with_capacity(d * n);
    for i in 0..d {
        let row = g.grad(flat.at(i).sum(), &[theta])?[0];
        data.extend_from_slice(row.value().data());
    }
    Tensor::matrix(d, n, data)
}
