use seqvi::data::{generate_sinusoid, load_iris_2d, TaskSequence, IRIS_CSV};
use seqvi::distributions::{DiagGaussian, GaussMixture};
use seqvi::harness::{accuracy, network_for, run_sequence, tune_regularisation, EvalConfig, LAMBDA_GRID};
use seqvi::methods::{empirical_fisher, train_task, Method, TrainerConfig, TrainerState};
use seqvi::nn::Posterior;
use seqvi::rng::{substream, Stream, TrainRngs};
use seqvi::Error;

const TRACE_TOL: f64 = 1e-9;
/// Largest loss-trace gap between a VI trainer with σ ≈ 0, zero KL weight,
/// and the matching MAP trainer.
const MAP_TRACE_TOL: f64 = 1e-5;

fn iris() -> TaskSequence {
    load_iris_2d(IRIS_CSV, 0).unwrap().standardized().unwrap()
}

fn cfg(method: Method, epochs: usize) -> TrainerConfig {
    TrainerConfig {
        epochs,
        ..TrainerConfig::for_method(method)
    }
}

struct Run {
    states: Vec<TrainerState>,
    initial: TrainerState,
}

fn train(seq: &TaskSequence, cfg: &TrainerConfig, tasks: usize) -> Run {
    let spec = network_for(seq).unwrap();
    let bounds = seqvi::data::input_bounds(seq).unwrap();
    let mut init = substream(cfg.seed, Stream::Init);
    let mut rngs = TrainRngs::from_seed(cfg.seed);
    let initial = TrainerState::init(&spec, cfg, bounds, &mut init).unwrap();
    let mut state = initial.clone();
    let mut states = vec![];
    for t in 0..tasks {
        state = train_task(state, &seq.tasks[t].train, cfg, &mut rngs).unwrap();
        states.push(state.clone());
    }
    Run { states, initial }
}

#[test]
fn likelihood_focused_priors_never_change() {
    let seq = iris();
    for method in [Method::LGVcl, Method::LGmVcl, Method::LGSfsvi, Method::LGmSfsvi] {
        let run = train(&seq, &cfg(method, 3), 3);
        let first = run.initial.prior.clone().unwrap();
        let n = run.initial.spec.num_params();
        let standard = match method.family().unwrap() {
            seqvi::methods::Family::Gaussian => Posterior::Gaussian(DiagGaussian::standard(n)),
            seqvi::methods::Family::Mixture => Posterior::Mixture(GaussMixture::standard(3, n)),
        };
        assert_eq!(first, standard);
        for s in &run.states {
            assert_eq!(s.prior.as_ref().unwrap().to_flat(), first.to_flat(), "{method}");
        }
    }
}

#[test]
fn prior_focused_priors_track_the_previous_posterior() {
    let seq = iris();
    for method in [Method::PGVcl, Method::PGmVcl, Method::PGSfsvi, Method::PGmSfsvi] {
        let run = train(&seq, &cfg(method, 3), 3);
        let mut previous = run.initial.variational.clone();
        for s in &run.states {
            assert_eq!(s.prior.as_ref().unwrap().to_flat(), s.variational.to_flat(), "{method}");
            assert_ne!(s.variational, previous, "{method} did not train");
            previous = s.variational.clone();
        }
    }
}

#[test]
fn single_component_mixtures_reduce_to_gaussians() {
    let seq = generate_sinusoid(0);
    for (gm, g) in [
        (Method::PGmVcl, Method::PGVcl),
        (Method::LGmVcl, Method::LGVcl),
        (Method::PGmSfsvi, Method::PGSfsvi),
        (Method::LGmSfsvi, Method::LGSfsvi),
    ] {
        let a = TrainerConfig {
            k: 1,
            ..cfg(gm, 2)
        };
        let ra = train(&seq, &a, 2);
        let rb = train(&seq, &cfg(g, 2), 2);
        for (sa, sb) in ra.states.iter().zip(&rb.states) {
            assert_eq!(sa.loss_trace.len(), sb.loss_trace.len());
            let gap = sa
                .loss_trace
                .iter()
                .zip(&sb.loss_trace)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(gap <= TRACE_TOL, "{gm} vs {g}: {gap:e}");
        }
    }
}

#[test]
fn ewc_accumulates_per_task_fisher() {
    let seq = iris();
    let run = train(&seq, &cfg(Method::Ewc, 5), 2);
    let spec = &run.initial.spec;
    let mut expected = vec![0.0; spec.num_params()];
    for (t, s) in run.states.iter().enumerate() {
        let Posterior::Point(theta) = &s.variational else { panic!() };
        let f = empirical_fisher(spec, theta, &seq.tasks[t].train).unwrap();
        for (e, v) in expected.iter_mut().zip(&f) {
            *e += v;
        }
        let ewc = s.ewc.as_ref().unwrap();
        assert_eq!(&ewc.anchor, theta);
        assert_eq!(ewc.per_task.len(), t + 1);
        for (a, b) in ewc.fisher.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            assert!(*a >= 0.0);
        }
    }
}

#[test]
fn si_importances_are_nonnegative() {
    let seq = iris();
    for xi in [0.1, 1.0, 10.0] {
        let c = TrainerConfig { xi, ..cfg(Method::Si, 5) };
        let run = train(&seq, &c, 3);
        for s in &run.states {
            let si = s.si.as_ref().unwrap();
            assert!(si.omega.iter().all(|&w| w >= 0.0 && w.is_finite()));
            assert!(si.omega.iter().any(|&w| w > 0.0));
        }
    }
}

/// With σ ≈ 0 and no KL term every VI trainer follows the MAP trainer that
/// uses the same batches and learning rate.
#[test]
fn vi_with_zero_kl_weight_tracks_map_training() {
    let seq = iris();
    for method in [
        Method::PGVcl,
        Method::LGVcl,
        Method::PGmVcl,
        Method::LGmVcl,
        Method::PGSfsvi,
        Method::LGSfsvi,
        Method::PGmSfsvi,
        Method::LGmSfsvi,
    ] {
        let vi = TrainerConfig {
            k: 1,
            kl_weight: 0.0,
            init_sigma: 1e-8,
            ..cfg(method, 3)
        };
        let map = TrainerConfig {
            kl_weight: 0.0,
            base_lr: vi.effective_lr(),
            ..cfg(if method.replays() { Method::Er } else { Method::FineTune }, 3)
        };
        let a = train(&seq, &vi, 1);
        let b = train(&seq, &map, 1);
        let (ta, tb) = (&a.states[0].loss_trace, &b.states[0].loss_trace);
        assert_eq!(ta.len(), tb.len(), "{method}");
        let gap = ta.iter().zip(tb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap <= MAP_TRACE_TOL, "{method}: {gap:e}");
    }
}

#[test]
fn zero_epochs_only_update_the_coreset() {
    let seq = iris();
    for method in Method::ALL {
        let run = train(&seq, &cfg(method, 0), 1);
        let s = &run.states[0];
        assert_eq!(s.variational, run.initial.variational, "{method}");
        assert!(s.loss_trace.is_empty());
        assert_eq!(s.coreset.len(), 16);
        assert_eq!(s.task_index, 1);
    }
}

#[test]
fn coreset_holds_per_task_samples_of_training_data() {
    let seq = iris();
    let run = train(&seq, &cfg(Method::Er, 1), 3);
    let c = &run.states[2].coreset;
    assert_eq!(c.len(), 48);
    for t in 0..3 {
        assert_eq!(c.count_for_task(t), 16);
        let train = &seq.tasks[t].train;
        for e in c.entries().iter().filter(|e| e.task_id == t) {
            assert!((0..train.len()).any(|i| train.inputs().row(i) == e.input.as_slice() && train.labels()[i] == e.label));
        }
    }
    let too_many = TrainerConfig {
        coreset_per_task: 1000,
        ..cfg(Method::Er, 0)
    };
    let spec = network_for(&seq).unwrap();
    let state = TrainerState::init(&spec, &too_many, vec![(0.0, 1.0); 2], &mut substream(0, Stream::Init)).unwrap();
    let err = train_task(state, &seq.tasks[0].train, &too_many, &mut TrainRngs::from_seed(0));
    assert!(matches!(err, Err(Error::Domain(_))));
}

#[test]
fn fine_tune_fits_the_first_iris_task() {
    let seq = iris();
    let run = train(&seq, &cfg(Method::FineTune, 100), 1);
    let spec = &run.initial.spec;
    let acc = accuracy(
        spec,
        &run.states[0].variational,
        &seq.tasks[0].train,
        1,
        &mut substream(0, Stream::Eval),
    )
    .unwrap();
    assert!(acc >= 0.95, "{acc}");
}

#[test]
fn runs_are_deterministic() {
    let seq = iris();
    let c = cfg(Method::LGmSfsvi, 3);
    let eval = EvalConfig::default();
    let a = run_sequence(&seq, &c, &eval).unwrap();
    let b = run_sequence(&seq, &c, &eval).unwrap();
    assert_eq!(a.test_rows, b.test_rows);
    assert_eq!(a.checkpoints, b.checkpoints);
    assert_eq!(a.loss_traces, b.loss_traces);
    let other = run_sequence(&seq, &TrainerConfig { seed: 1, ..c }, &eval).unwrap();
    assert_ne!(a.checkpoints, other.checkpoints);
}

#[test]
fn divergence_reports_task_and_step() {
    let seq = iris();
    let c = TrainerConfig {
        init_sigma: 1e300,
        ..cfg(Method::PGVcl, 1)
    };
    let spec = network_for(&seq).unwrap();
    let state = TrainerState::init(&spec, &c, vec![(0.0, 1.0); 2], &mut substream(0, Stream::Init)).unwrap();
    match train_task(state, &seq.tasks[0].train, &c, &mut TrainRngs::from_seed(0)) {
        Err(Error::Divergence { task: 1, step: 0, .. }) => {}
        other => panic!("{:?}", other.map(|s| s.loss_trace)),
    }
}

#[test]
fn tuning_picks_grid_values() {
    let seq = iris();
    let eval = EvalConfig {
        prediction_samples: 1,
        grid_resolution: 2,
    };
    let tuned = tune_regularisation(&seq, &cfg(Method::Ewc, 2), &eval).unwrap();
    assert!(LAMBDA_GRID.contains(&tuned.lambda_reg));
    let plain = cfg(Method::LGSfsvi, 2);
    assert_eq!(tune_regularisation(&seq, &plain, &eval).unwrap(), plain);
}
