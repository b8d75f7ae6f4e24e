use crate::autodiff::activations::{log_softmax, softplus_scalar};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Head;

fn check(logits: &[usize], labels: &[usize], head: Head) -> Result<()> {
    let (rows, cols) = (logits[0], logits[1]);
    if rows != labels.len() {
        return Err(Error::contract(format!(
            "{} labels for {rows} rows of logits",
            labels.len()
        )));
    }
    let classes = match head {
        Head::Binary => {
            if cols != 1 {
                return Err(Error::contract("binary head expects one logit per row"));
            }
            2
        }
        Head::Multiclass => cols,
    };
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::contract(format!("label {y} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log likelihood: categorical cross entropy for a
/// multiclass head, binary cross entropy on one logit otherwise.
pub fn loss(logits: &Tensor, labels: &[usize], head: Head) -> Result<f64> {
    if logits.rank() != 2 {
        return Err(Error::contract("logits must be a matrix"));
    }
    check(logits.shape(), labels, head)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = match head {
        Head::Multiclass => {
            let ls = log_softmax(logits);
            labels.iter().enumerate().map(|(i, &y)| -ls.get(i, y)).sum()
        }
        Head::Binary => labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let z = logits.get(i, 0);
                softplus_scalar(z) - y as f64 * z
            })
            .sum(),
    };
    Ok(total / labels.len() as f64)
}

/// Summed negative log likelihood on the tape.
pub fn nll_sum_var<'g>(logits: Var<'g>, labels: &[usize], head: Head) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::contract("logits must be a matrix"));
    }
    check(&shape, labels, head)?;
    let g = logits.graph();
    let (rows, cols) = (shape[0], shape[1]);
    Ok(match head {
        Head::Multiclass => {
            let mut mask = vec![0.0; rows * cols];
            for (i, &y) in labels.iter().enumerate() {
                mask[i * cols + y] = 1.0;
            }
            let mask = g.constant(Tensor::matrix(rows, cols, mask)?);
            -(logits.log_softmax() * mask).sum()
        }
        Head::Binary => {
            let y = g.constant(Tensor::matrix(
                rows,
                1,
                labels.iter().map(|&y| y as f64).collect(),
            )?);
            (logits.softplus() - logits * y).sum()
        }
    })
}
