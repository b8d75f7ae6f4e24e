//! Elementwise activations on plain tensors.
//!
//! The tape versions live on [`Var`](super::Var); these share the same
//! scalar kernels.

use super::tensor::Tensor;

const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

pub fn softplus_scalar(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        // ln_1p(exp(x)) keeps precision for large negative x.
        x.exp().ln_1p()
    }
}

/// Inverse of softplus, for setting ρ from a target σ.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    if y > SOFTPLUS_LINEAR_ABOVE {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Log-softmax over the last axis.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Numerically stable log-sum-exp of a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn analytic_values() {
        assert_abs_diff_eq!(softplus_scalar(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus_scalar(0.0), 0.693147, epsilon = 1e-6);
        assert_eq!(swish(&Tensor::scalar(0.0)).data(), &[0.0]);
        let s = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0]));
        for v in s.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus_scalar(1000.0), 1000.0);
        let tiny = softplus_scalar(-700.0);
        assert!(tiny > 0.0 && tiny.is_finite());
        assert_abs_diff_eq!(softplus_inv(softplus_scalar(-5.0)), -5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(softplus_inv(1.0), (std::f64::consts::E - 1.0).ln(), epsilon = 1e-15);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]));
        assert_abs_diff_eq!(s.data()[0], 1.0, epsilon = 1e-12);
        assert!(s.is_finite());
    }
}
