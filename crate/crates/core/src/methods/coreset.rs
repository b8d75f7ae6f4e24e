use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::data::{uniform_points, LabeledDataset};
use crate::error::{Error, Result};
use crate::linearize::{InducingSet, InducingSource};

#[derive(Clone, Debug, PartialEq)]
pub struct CoresetEntry {
    pub input: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

/// Stored points from earlier tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct Coreset {
    dim: usize,
    entries: Vec<CoresetEntry>,
}

impl Coreset {
    pub fn new(dim: usize) -> Self {
        Coreset {
            dim,
            entries: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[CoresetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_for_task(&self, task_id: usize) -> usize {
        self.entries.iter().filter(|e| e.task_id == task_id).count()
    }

    pub fn to_dataset(&self) -> LabeledDataset {
        self.subset(&(0..self.len()).collect::<Vec<_>>())
    }

    fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.entries[i].input);
            labels.push(self.entries[i].label);
        }
        LabeledDataset::new(Tensor::from_parts(vec![idx.len(), self.dim], data), labels)
            .expect("coreset entries are finite")
    }

    /// A minibatch of `n` entries: without replacement when the coreset is
    /// large enough, uniformly with replacement otherwise.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LabeledDataset {
        if self.is_empty() {
            return LabeledDataset::empty(self.dim);
        }
        let idx: Vec<usize> = if n <= self.len() {
            sample(rng, self.len(), n).into_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..self.len())).collect()
        };
        self.subset(&idx)
    }
}

/// Add `per_task` uniformly chosen training points of `task`, tagged with
/// `task_id`. Earlier entries are kept as they are.
pub fn update_coreset<R: Rng + ?Sized>(
    coreset: &Coreset,
    task: &LabeledDataset,
    task_id: usize,
    per_task: usize,
    rng: &mut R,
) -> Result<Coreset> {
    if per_task > task.len() {
        return Err(Error::domain(format!(
            "cannot store {per_task} points from a task of {}",
            task.len()
        )));
    }
    if per_task > 0 && task.dim() != coreset.dim {
        return Err(Error::contract("task inputs do not match the coreset width"));
    }
    let mut out = coreset.clone();
    for i in sample(rng, task.len(), per_task) {
        out.entries.push(CoresetEntry {
            input: task.inputs().row(i).to_vec(),
            label: task.labels()[i],
            task_id,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingMode {
    Uniform,
    FromCoreset,
}

/// `n` inducing inputs, either uniform inside `bounds` or drawn from the
/// coreset inputs (without replacement when the coreset is large enough).
pub fn make_inducing<R: Rng + ?Sized>(
    n: usize,
    bounds: &[(f64, f64)],
    coreset: &Coreset,
    mode: InducingMode,
    rng: &mut R,
) -> Result<InducingSet> {
    if n == 0 {
        return Err(Error::domain("need at least one inducing point"));
    }
    match mode {
        InducingMode::Uniform => {
            if bounds.is_empty() {
                return Err(Error::domain("uniform inducing points need bounds"));
            }
            if let Some(b) = bounds.iter().find(|b| !(b.0 <= b.1)) {
                return Err(Error::domain(format!("invalid interval {b:?}")));
            }
            InducingSet::new(uniform_points(bounds, n, rng), InducingSource::GeneratedUniform)
        }
        InducingMode::FromCoreset => {
            if coreset.is_empty() {
                return Err(Error::domain("the coreset is empty"));
            }
            let batch = coreset.sample_batch(n, rng);
            InducingSet::new(batch.inputs().clone(), InducingSource::SampledFromCoreset)
        }
    }
}
