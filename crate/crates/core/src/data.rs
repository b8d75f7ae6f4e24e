//! Task sequences for the desk-scale experiments.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::normal_vec;

/// The bundled iris table: sepal length, sepal width, petal length,
/// petal width, class name.
pub const IRIS_CSV: &str = include_str!("../data/iris.csv");

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 2 || inputs.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::domain("inputs contain non-finite values"));
        }
        Ok(LabeledDataset { inputs, labels })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledDataset {
            inputs: Tensor::zeros(&[0, dim]),
            labels: vec![],
        }
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let dim = parts.first().map(|p| p.dim()).unwrap_or(0);
        let mut rows: Vec<&[f64]> = vec![];
        let mut labels = vec![];
        for p in parts {
            if p.dim() != dim {
                return Err(Error::contract("datasets differ in input width"));
            }
            rows.extend((0..p.len()).map(|i| p.inputs.row(i)));
            labels.extend_from_slice(&p.labels);
        }
        let inputs = if rows.is_empty() {
            Tensor::zeros(&[0, dim])
        } else {
            Tensor::from_rows(&rows)?
        };
        LabeledDataset::new(inputs, labels)
    }

    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSplit {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    ClassIncremental,
    DomainIncremental,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSequence {
    pub name: String,
    pub setting: Setting,
    pub class_universe: Vec<String>,
    pub tasks: Vec<TaskSplit>,
    pub input_dim: usize,
}

impl TaskSequence {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Width of the network output for this sequence: one logit for a
    /// binary domain-incremental problem, one per class otherwise.
    pub fn output_dim(&self) -> usize {
        match self.setting {
            Setting::DomainIncremental if self.class_universe.len() == 2 => 1,
            _ => self.class_universe.len(),
        }
    }

    /// Per-dimension mean and standard deviation of the training inputs
    /// over all tasks.
    pub fn train_moments(&self) -> Result<Vec<(f64, f64)>> {
        let mut sum = vec![0.0; self.input_dim];
        let mut sq = vec![0.0; self.input_dim];
        let mut n = 0usize;
        for task in &self.tasks {
            for i in 0..task.train.len() {
                n += 1;
                for (d, &v) in task.train.inputs.row(i).iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
            }
        }
        if n == 0 {
            return Err(Error::domain("no training inputs"));
        }
        let n = n as f64;
        Ok(sum
            .iter()
            .zip(&sq)
            .map(|(&s, &q)| {
                let m = s / n;
                (m, (q / n - m * m).max(0.0).sqrt())
            })
            .collect())
    }

    /// Every split shifted and scaled by the training-input moments, so the
    /// training inputs have zero mean and unit variance per dimension.
    /// Constant dimensions are only shifted.
    pub fn standardized(&self) -> Result<TaskSequence> {
        let moments = self.train_moments()?;
        let scale = |ds: &LabeledDataset| -> Result<LabeledDataset> {
            let mut x = ds.inputs.clone();
            let dim = self.input_dim;
            for (j, v) in x.data_mut().iter_mut().enumerate() {
                let (m, s) = moments[j % dim];
                *v = if s > 0.0 { (*v - m) / s } else { *v - m };
            }
            LabeledDataset::new(x, ds.labels.clone())
        };
        let tasks = self
            .tasks
            .iter()
            .map(|t| {
                Ok(TaskSplit {
                    train: scale(&t.train)?,
                    validation: scale(&t.validation)?,
                    test: scale(&t.test)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TaskSequence {
            tasks,
            ..self.clone()
        })
    }

    /// Write every split as `features…,label` CSV files into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (t, task) in self.tasks.iter().enumerate() {
            for (split, ds) in [
                ("train", &task.train),
                ("validation", &task.validation),
                ("test", &task.test),
            ] {
                let path = dir.join(format!("{}_task{}_{}.csv", self.name, t + 1, split));
                let mut w = csv::Writer::from_path(path)?;
                let mut header: Vec<String> =
                    (1..=self.input_dim).map(|i| format!("x{i}")).collect();
                header.push("label".into());
                w.write_record(&header)?;
                for i in 0..ds.len() {
                    let mut rec: Vec<String> =
                        ds.inputs.row(i).iter().map(|v| v.to_string()).collect();
                    rec.push(ds.labels[i].to_string());
                    w.write_record(&rec)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

/// Geometry of the synthetic sinusoid sequence.
///
/// Task t centres both classes at x_t = −π + t·π/2, with the upper class at
/// sin(x_t) + offset and the lower class at sin(x_t) − offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidParams {
    pub tasks: usize,
    pub points_per_cell: usize,
    pub sigma: f64,
    pub offset: f64,
    pub x_start: f64,
    pub x_step: f64,
}

impl Default for SinusoidParams {
    fn default() -> Self {
        SinusoidParams {
            tasks: 5,
            points_per_cell: 100,
            sigma: 0.1,
            offset: 0.5,
            x_start: -PI,
            x_step: PI / 2.0,
        }
    }
}

impl SinusoidParams {
    /// Mean of class `c` (0 = lower, 1 = upper) in task `t`.
    pub fn class_mean(&self, t: usize, c: usize) -> [f64; 2] {
        let x = self.x_start + t as f64 * self.x_step;
        let sign = if c == 1 { 1.0 } else { -1.0 };
        [x, x.sin() + sign * self.offset]
    }
}

pub fn generate_sinusoid(seed: u64) -> TaskSequence {
    generate_sinusoid_with(&SinusoidParams::default(), seed)
}

pub fn generate_sinusoid_with(params: &SinusoidParams, seed: u64) -> TaskSequence {
    let mut rng = crate::rng::substream(seed, crate::rng::Stream::Data);
    let mut cell = |t: usize| -> LabeledDataset {
        let n = params.points_per_cell;
        let mut rows = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for c in 0..2 {
            let m = params.class_mean(t, c);
            for _ in 0..n {
                let z = normal_vec(&mut rng, 2);
                rows.push([m[0] + params.sigma * z[0], m[1] + params.sigma * z[1]]);
                labels.push(c);
            }
        }
        LabeledDataset::new(Tensor::from_rows(&rows).expect("rows are 2-wide"), labels)
            .expect("generated data is finite")
    };
    let tasks = (0..params.tasks)
        .map(|t| TaskSplit {
            train: cell(t),
            validation: cell(t),
            test: cell(t),
        })
        .collect();
    TaskSequence {
        name: "di-sinusoid".into(),
        setting: Setting::DomainIncremental,
        class_universe: vec!["lower".into(), "upper".into()],
        tasks,
        input_dim: 2,
    }
}

/// Rows of the raw iris table.
#[derive(Clone, Debug, PartialEq)]
pub struct IrisTable {
    pub features: Vec<[f64; 4]>,
    pub classes: Vec<String>,
}

/// Parse `sepal length, sepal width, petal length, petal width, class`
/// records. A leading header line is skipped; blank lines are ignored.
pub fn parse_iris(raw: &str) -> Result<IrisTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let mut features = vec![];
    let mut classes = vec![];
    // The reader's own line counter is off after blank lines, and record
    // offsets point at the blank lines preceding a record; count from bytes.
    let bytes = raw.as_bytes();
    let line_at = |byte: u64| {
        let mut b = (byte as usize).min(bytes.len());
        while b < bytes.len() && (bytes[b] == b'\n' || bytes[b] == b'\r') {
            b += 1;
        }
        bytes[..b].iter().filter(|&&c| c == b'\n').count() + 1
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| line_at(p.byte()));
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| line_at(p.byte()));
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != 5 {
            return Err(Error::parse(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().take(4).map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::parse(line, "non-finite feature"));
                }
                if rec[4].is_empty() {
                    return Err(Error::parse(line, "missing class name"));
                }
                features.push([v[0], v[1], v[2], v[3]]);
                classes.push(rec[4].to_string());
            }
            Err(_) if features.is_empty() && line == 1 => continue,
            Err(e) => return Err(Error::parse(line, format!("bad feature: {e}"))),
        }
    }
    Ok(IrisTable { features, classes })
}

/// Petal length and width, split 64/16/20 (stratified by class) and then by
/// class into a three-task class-incremental sequence.
pub fn load_iris_2d(raw: &str, seed: u64) -> Result<TaskSequence> {
    let table = parse_iris(raw)?;
    if table.features.len() != 150 {
        return Err(Error::domain(format!(
            "iris table has {} rows, expected 150",
            table.features.len()
        )));
    }
    let universe: Vec<String> = table
        .classes
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if universe.len() != 3 {
        return Err(Error::domain(format!(
            "iris table has {} classes, expected 3",
            universe.len()
        )));
    }
    let mut rng = crate::rng::substream(seed, crate::rng::Stream::Data);
    let label_of = |name: &str| universe.iter().position(|u| u == name).expect("known class");

    let mut tasks = vec![];
    for name in &universe {
        let mut idx: Vec<usize> = (0..150).filter(|&i| table.classes[i] == *name).collect();
        idx.shuffle(&mut rng);
        let (test, rest) = holdout(&idx, 0.2);
        let (validation, train) = holdout(rest, 0.2);
        let make = |ids: &[usize]| -> Result<LabeledDataset> {
            let rows: Vec<[f64; 2]> = ids
                .iter()
                .map(|&i| [table.features[i][2], table.features[i][3]])
                .collect();
            let inputs = if rows.is_empty() {
                Tensor::zeros(&[0, 2])
            } else {
                Tensor::from_rows(&rows)?
            };
            LabeledDataset::new(inputs, ids.iter().map(|&i| label_of(&table.classes[i])).collect())
        };
        tasks.push(TaskSplit {
            train: make(train)?,
            validation: make(validation)?,
            test: make(test)?,
        });
    }
    Ok(TaskSequence {
        name: "ci-split-iris-2d".into(),
        setting: Setting::ClassIncremental,
        class_universe: universe,
        tasks,
        input_dim: 2,
    })
}

/// Split off `round(frac · n)` leading entries.
fn holdout(idx: &[usize], frac: f64) -> (&[usize], &[usize]) {
    let n = (idx.len() as f64 * frac).round() as usize;
    idx.split_at(n)
}

/// Per-dimension (min, max) of the training inputs over all tasks.
pub fn input_bounds(seq: &TaskSequence) -> Result<Vec<(f64, f64)>> {
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); seq.input_dim];
    let mut seen = false;
    for task in &seq.tasks {
        for i in 0..task.train.len() {
            seen = true;
            for (b, &v) in bounds.iter_mut().zip(task.train.inputs.row(i)) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
    }
    if !seen {
        return Err(Error::domain("no training inputs to bound"));
    }
    Ok(bounds)
}

/// Uniform draws inside per-dimension bounds, as an `n × dim` matrix.
pub fn uniform_points<R: Rng + ?Sized>(bounds: &[(f64, f64)], n: usize, rng: &mut R) -> Tensor {
    let dim = bounds.len();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for &(lo, hi) in bounds {
            let u: f64 = rng.random();
            data.push(lo + (hi - lo) * u);
        }
    }
    Tensor::from_parts(vec![n, dim], data)
}
