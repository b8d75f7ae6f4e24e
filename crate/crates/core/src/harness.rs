//! Running a trainer through a task sequence and scoring it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::config::{sequence_label, RunConfig};
use crate::data::{input_bounds, LabeledDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::methods::{train_task, Method, TrainerConfig, TrainerState};
use crate::nn::{argmax_rows, predict_bma, FcnnSpec, Posterior, DEFAULT_PREDICTION_SAMPLES};
use crate::rng::{substream, Stream, StreamRng, TrainRngs};

/// Hidden widths of the desk-scale network.
pub const DESK_HIDDEN: [usize; 2] = [16, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub prediction_samples: usize,
    pub grid_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            prediction_samples: DEFAULT_PREDICTION_SAMPLES,
            grid_resolution: 50,
        }
    }
}

/// Accuracies on the test sets of tasks `1..=task` after training task `task`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub task: usize,
    pub accuracies: Vec<f64>,
}

impl MetricsRow {
    pub fn average(&self) -> f64 {
        if self.accuracies.is_empty() {
            return 0.0;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Mean accuracy over all test sets after the final task.
pub fn final_average_accuracy(rows: &[MetricsRow], num_tasks: usize) -> Result<f64> {
    match rows.iter().find(|r| r.task == num_tasks) {
        Some(r) if r.accuracies.len() == num_tasks => Ok(r.average()),
        Some(_) => Err(Error::contract("final row has the wrong number of accuracies")),
        None => Err(Error::contract(format!("no metrics row for final task {num_tasks}"))),
    }
}

/// Predictive probabilities: model averaging for a variational posterior,
/// a single forward pass for a point estimate.
pub fn predict(
    spec: &FcnnSpec,
    posterior: &Posterior,
    x: &Tensor,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<Tensor> {
    predict_bma(spec, posterior, x, n_samples, rng)
}

pub fn accuracy(
    spec: &FcnnSpec,
    posterior: &Posterior,
    data: &LabeledDataset,
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("cannot score an empty dataset"));
    }
    let probs = predict(spec, posterior, data.inputs(), n_samples, rng)?;
    let hits = argmax_rows(&probs)
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

pub fn network_for(seq: &TaskSequence) -> Result<FcnnSpec> {
    FcnnSpec::new(seq.input_dim, DESK_HIDDEN.to_vec(), seq.output_dim())
}

/// Everything a run produces before it is written out.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub spec: FcnnSpec,
    pub method: Method,
    pub test_rows: Vec<MetricsRow>,
    pub validation_rows: Vec<MetricsRow>,
    /// Model after each task.
    pub checkpoints: Vec<Posterior>,
    pub bounds: Vec<(f64, f64)>,
    pub final_state: TrainerState,
    /// Loss traces per trained task (joint MAP has one).
    pub loss_traces: Vec<Vec<f64>>,
}

impl RunOutcome {
    pub fn num_tasks(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn final_average_accuracy(&self) -> Result<f64> {
        final_average_accuracy(&self.test_rows, self.num_tasks())
    }

    pub fn validation_final_average_accuracy(&self) -> Result<f64> {
        final_average_accuracy(&self.validation_rows, self.num_tasks())
    }
}

fn score_rows(
    spec: &FcnnSpec,
    method: Method,
    model: &Posterior,
    sets: &[&LabeledDataset],
    task: usize,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<MetricsRow> {
    let accuracies = sets[..task]
        .iter()
        .map(|d| accuracy(spec, model, d, samples, rng))
        .collect::<Result<_>>()?;
    Ok(MetricsRow {
        method: method.name().to_string(),
        task,
        accuracies,
    })
}

/// Train `cfg.method` through the sequence, scoring every seen test and
/// validation set after each task. All randomness comes from `cfg.seed`.
///
/// `on_task` sees each task's row as soon as it is scored, so a caller can
/// keep partial results if a later task diverges.
pub fn run_sequence_with(
    seq: &TaskSequence,
    cfg: &TrainerConfig,
    eval: &EvalConfig,
    mut on_task: impl FnMut(&MetricsRow, &Posterior) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if seq.num_tasks() == 0 {
        return Err(Error::domain("the sequence has no tasks"));
    }
    if eval.prediction_samples == 0 {
        return Err(Error::Config("prediction_samples must be positive".into()));
    }
    let spec = network_for(seq)?;
    let bounds = input_bounds(seq)?;
    let mut init = substream(cfg.seed, Stream::Init);
    let mut rngs = TrainRngs::from_seed(cfg.seed);
    let mut eval_rng = substream(cfg.seed, Stream::Eval);
    let mut state = TrainerState::init(&spec, cfg, bounds.clone(), &mut init)?;

    let tests: Vec<&LabeledDataset> = seq.tasks.iter().map(|t| &t.test).collect();
    let vals: Vec<&LabeledDataset> = seq.tasks.iter().map(|t| &t.validation).collect();
    let mut out = RunOutcome {
        spec: spec.clone(),
        method: cfg.method,
        test_rows: vec![],
        validation_rows: vec![],
        checkpoints: vec![],
        bounds,
        final_state: state.clone(),
        loss_traces: vec![],
    };

    if cfg.method == Method::JointMap {
        let trains: Vec<&LabeledDataset> = seq.tasks.iter().map(|t| &t.train).collect();
        let union = LabeledDataset::concat(&trains)?;
        state = train_task(state, &union, cfg, &mut rngs)?;
        out.loss_traces.push(state.loss_trace.clone());
    }
    for t in 1..=seq.num_tasks() {
        if cfg.method != Method::JointMap {
            state = train_task(state, &seq.tasks[t - 1].train, cfg, &mut rngs)?;
            out.loss_traces.push(state.loss_trace.clone());
        }
        let model = state.variational.clone();
        let row = score_rows(&spec, cfg.method, &model, &tests, t, eval.prediction_samples, &mut eval_rng)?;
        let vrow = score_rows(&spec, cfg.method, &model, &vals, t, eval.prediction_samples, &mut eval_rng)?;
        on_task(&row, &model)?;
        out.test_rows.push(row);
        out.validation_rows.push(vrow);
        out.checkpoints.push(model);
    }
    out.final_state = state;
    Ok(out)
}

pub fn run_sequence(seq: &TaskSequence, cfg: &TrainerConfig, eval: &EvalConfig) -> Result<RunOutcome> {
    run_sequence_with(seq, cfg, eval, |_, _| Ok(()))
}

/// `method,task,acc_1,…,acc_T,avg`; rows shorter than `T` are padded with
/// empty fields.
pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow], num_tasks: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["method".to_string(), "task".to_string()];
    header.extend((1..=num_tasks).map(|i| format!("acc_{i}")));
    header.push("avg".into());
    out.write_record(&header)?;
    for r in rows {
        if r.accuracies.len() > num_tasks {
            return Err(Error::contract("more accuracies than tasks"));
        }
        let mut rec = vec![r.method.clone(), r.task.to_string()];
        for i in 0..num_tasks {
            rec.push(r.accuracies.get(i).map(|a| a.to_string()).unwrap_or_default());
        }
        rec.push(r.average().to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics(raw: &str) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(raw.as_bytes());
    let mut rows = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::parse(line, "too few fields"));
        }
        let task: usize = rec[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad task index {:?}", &rec[1])))?;
        let accuracies = rec
            .iter()
            .skip(2)
            .take(rec.len() - 3)
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(line, format!("bad accuracy {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(MetricsRow {
            method: rec[0].to_string(),
            task,
            accuracies,
        });
    }
    Ok(rows)
}

/// A `resolution × resolution` lattice over 2-D bounds, x1 varying fastest.
pub fn grid_lattice(bounds: &[(f64, f64)], resolution: usize) -> Result<Tensor> {
    if bounds.len() != 2 {
        return Err(Error::domain("prediction grids need a 2-D input space"));
    }
    if resolution < 2 {
        return Err(Error::domain("grid resolution must be at least 2"));
    }
    let coord = |(lo, hi): (f64, f64), i: usize| {
        if i + 1 == resolution {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(resolution * resolution * 2);
    for j in 0..resolution {
        for i in 0..resolution {
            data.push(coord(bounds[0], i));
            data.push(coord(bounds[1], j));
        }
    }
    Tensor::matrix(resolution * resolution, 2, data)
}

/// Write `x1,x2,p_class1,…` prediction probabilities over the lattice.
pub fn export_grid(
    spec: &FcnnSpec,
    posterior: &Posterior,
    bounds: &[(f64, f64)],
    resolution: usize,
    n_samples: usize,
    rng: &mut StreamRng,
    path: &Path,
) -> Result<()> {
    let x = grid_lattice(bounds, resolution)?;
    let p = predict(spec, posterior, &x, n_samples, rng)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x1".to_string(), "x2".to_string()];
    header.extend((1..=p.cols()).map(|c| format!("p_class{c}")));
    w.write_record(&header)?;
    for i in 0..x.rows() {
        let rec: Vec<String> = x.row(i).iter().chain(p.row(i)).map(|v| v.to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GRID_FILE: &str = "grid.csv";

pub fn checkpoint_file(task: usize) -> String {
    format!("checkpoint_task{task}.txt")
}

#[derive(Serialize)]
struct Manifest<'a> {
    sequence: &'a str,
    method: &'a str,
    seed: u64,
    num_tasks: usize,
    final_average_accuracy: Option<f64>,
    metrics: Vec<ManifestRow>,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct ManifestRow {
    task: usize,
    accuracies: Vec<f64>,
    avg: f64,
}

fn write_manifest(cfg: &RunConfig, num_tasks: usize, rows: &[MetricsRow], dir: &Path) -> Result<()> {
    let m = Manifest {
        sequence: sequence_label(cfg.sequence.name),
        method: cfg.trainer.method.name(),
        seed: cfg.trainer.seed,
        num_tasks,
        final_average_accuracy: final_average_accuracy(rows, num_tasks).ok(),
        metrics: rows
            .iter()
            .map(|r| ManifestRow {
                task: r.task,
                accuracies: r.accuracies.clone(),
                avg: r.average(),
            })
            .collect(),
        config: cfg,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn write_metrics_file(dir: &Path, rows: &[MetricsRow], num_tasks: usize) -> Result<()> {
    let mut buf = vec![];
    write_metrics(&mut buf, rows, num_tasks)?;
    fs::write(dir.join(METRICS_FILE), buf)?;
    Ok(())
}

/// Train and evaluate one config, writing metrics, a checkpoint per task,
/// a manifest and (for 2-D inputs) the final prediction grid into `dir`.
///
/// Metrics and checkpoints are written as each task finishes, so a run
/// that diverges leaves its completed tasks on disk.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let seq = cfg.sequence.build(cfg.trainer.seed)?;
    let spec = network_for(&seq)?;
    let num_tasks = seq.num_tasks();
    let mut rows: Vec<MetricsRow> = vec![];
    write_metrics_file(dir, &rows, num_tasks)?;
    let result = run_sequence_with(&seq, &cfg.trainer, &cfg.eval, |row, model| {
        rows.push(row.clone());
        Checkpoint {
            method: cfg.trainer.method,
            task: row.task,
            spec: spec.clone(),
            posterior: model.clone(),
        }
        .save(&dir.join(checkpoint_file(row.task)))?;
        write_metrics_file(dir, &rows, num_tasks)
    });
    write_manifest(cfg, num_tasks, &rows, dir)?;
    let outcome = result?;
    if seq.input_dim == 2 {
        let model = outcome.checkpoints.last().expect("at least one task");
        let mut rng = substream(cfg.trainer.seed, Stream::Grid);
        export_grid(
            &spec,
            model,
            &outcome.bounds,
            cfg.eval.grid_resolution,
            cfg.eval.prediction_samples,
            &mut rng,
            &dir.join(GRID_FILE),
        )?;
    }
    Ok(outcome)
}

/// Every `*.toml` file in `dir`, sorted by name.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub config: PathBuf,
    pub sequence: String,
    pub method: String,
    pub seed: u64,
    pub final_average_accuracy: f64,
}

/// Run every config in `configs` under `root`, each in its own directory,
/// and write `summary.csv`. Configs run one after another.
pub fn sweep(configs: &[(PathBuf, RunConfig)], root: &Path) -> Result<Vec<SweepEntry>> {
    fs::create_dir_all(root)?;
    let mut entries = vec![];
    for (path, cfg) in configs {
        let out = run(cfg, &cfg.output_dir(root))?;
        entries.push(SweepEntry {
            config: path.clone(),
            sequence: sequence_label(cfg.sequence.name).to_string(),
            method: cfg.trainer.method.name().to_string(),
            seed: cfg.trainer.seed,
            final_average_accuracy: out.final_average_accuracy()?,
        });
    }
    let mut w = csv::Writer::from_path(root.join("summary.csv"))?;
    w.write_record(["config", "sequence", "method", "seed", "faa"])?;
    for e in &entries {
        w.write_record([
            e.config.display().to_string(),
            e.sequence.clone(),
            e.method.clone(),
            e.seed.to_string(),
            e.final_average_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(entries)
}

/// Regularisation strengths searched for EWC and SI.
pub const LAMBDA_GRID: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];
/// Damping values searched for SI.
pub const XI_GRID: [f64; 3] = [0.1, 1.0, 10.0];

/// Pick `lambda_reg` (and `xi` for SI) by validation final average
/// accuracy; the first best grid point wins ties. Other methods are
/// returned unchanged.
pub fn tune_regularisation(seq: &TaskSequence, cfg: &TrainerConfig, eval: &EvalConfig) -> Result<TrainerConfig> {
    let xis: &[f64] = match cfg.method {
        Method::Ewc => &[cfg.xi],
        Method::Si => &XI_GRID,
        _ => return Ok(cfg.clone()),
    };
    let mut best: Option<(f64, TrainerConfig)> = None;
    for &lambda_reg in &LAMBDA_GRID {
        for &xi in xis {
            let c = TrainerConfig {
                lambda_reg,
                xi,
                ..cfg.clone()
            };
            let faa = run_sequence(seq, &c, eval)?.validation_final_average_accuracy()?;
            if best.as_ref().is_none_or(|(b, _)| faa > *b) {
                best = Some((faa, c));
            }
        }
    }
    Ok(best.expect("nonempty grid").1)
}
