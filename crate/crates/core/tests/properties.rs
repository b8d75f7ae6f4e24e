use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqvi::autodiff::activations::{log_softmax, softmax, softplus_inv};
use seqvi::autodiff::Tensor;
use seqvi::checkpoint::{parse_checkpoint, Checkpoint};
use seqvi::config::{parse_config, RunConfig, SequenceConfig, SequenceName};
use seqvi::data::{parse_iris, LabeledDataset};
use seqvi::distributions::{
    kl_categorical, kl_diag_gaussian, kl_mixture_upper_bound, sample_gumbel_softmax, DiagGaussian, GaussMixture,
};
use seqvi::harness::{final_average_accuracy, grid_lattice, read_metrics, write_metrics, EvalConfig, MetricsRow};
use seqvi::methods::{make_inducing, update_coreset, Coreset, InducingMode, Method, OneCycle, TrainerConfig};
use seqvi::nn::{forward, predict_bma, FcnnSpec, Posterior};

fn gaussian(n: usize) -> impl Strategy<Value = DiagGaussian> {
    (vec(-3.0..3.0f64, n), vec(0.05..3.0f64, n))
        .prop_map(|(mu, s)| DiagGaussian::new(mu, s.into_iter().map(softplus_inv).collect()).unwrap())
}

fn mixture(k: usize, n: usize) -> impl Strategy<Value = GaussMixture> {
    (vec(-3.0..3.0f64, k), vec(gaussian(n), k)).prop_map(|(l, c)| GaussMixture::new(l, c).unwrap())
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.0..1.0f64, k).prop_filter_map("nonzero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
    })
}

fn small_spec() -> FcnnSpec {
    FcnnSpec::new(2, vec![5], 3).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    vec(-20.0..20.0f64, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 5)) {
        let s = softmax(&x);
        let l = log_softmax(&x);
        for r in 0..4 {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for c in 0..5 {
                prop_assert!((l.get(r, c) - s.get(r, c).ln()).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn tensor_shapes_must_match_data(rows in 1usize..5, cols in 1usize..5, extra in 1usize..3) {
        prop_assert!(Tensor::new(vec![rows, cols], vec![0.0; rows * cols]).is_ok());
        prop_assert!(Tensor::new(vec![rows, cols], vec![0.0; rows * cols + extra]).is_err());
    }

    #[test]
    fn gaussian_kl_is_nonnegative_and_zero_on_equality(q in gaussian(6), p in gaussian(6)) {
        prop_assert!(kl_diag_gaussian(&q, &p).unwrap() >= -1e-12);
        prop_assert!(kl_diag_gaussian(&q, &q).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn categorical_kl_is_nonnegative(a in simplex(4), b in simplex(4)) {
        let b: Vec<f64> = b.iter().map(|x| 0.5 * x + 0.125).collect();
        prop_assert!(kl_categorical(&a, &b).unwrap() >= -1e-12);
        prop_assert!(kl_categorical(&a, &a).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn mixture_bound_is_nonnegative_and_zero_on_equality(q in mixture(3, 4), p in mixture(3, 4)) {
        prop_assert!(kl_mixture_upper_bound(&q, &p).unwrap() >= -1e-12);
        prop_assert!(kl_mixture_upper_bound(&q, &q).unwrap().abs() <= 1e-9);
        let single_q = GaussMixture::new(vec![0.0], vec![q.components()[0].clone()]).unwrap();
        let single_p = GaussMixture::new(vec![1.0], vec![p.components()[0].clone()]).unwrap();
        prop_assert_eq!(
            kl_mixture_upper_bound(&single_q, &single_p).unwrap(),
            kl_diag_gaussian(&q.components()[0], &p.components()[0]).unwrap()
        );
    }

    #[test]
    fn gumbel_softmax_is_on_the_simplex(
        lambda in vec(-5.0..5.0f64, 1..6),
        t in 0.01..5.0f64,
        seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = seqvi::rng::gumbel_vec(&mut r, lambda.len());
        let w = sample_gumbel_softmax(&lambda, t, &g).unwrap().weights;
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn forward_is_deterministic(theta in vec(-2.0..2.0f64, 33), x in matrix(3, 2)) {
        let spec = small_spec();
        let a = forward(&spec, &theta, &x).unwrap();
        prop_assert_eq!(&a, &forward(&spec, &theta, &x).unwrap());
        let zero = forward(&spec, &[0.0; 33], &x).unwrap();
        prop_assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictions_are_distributions(q in mixture(2, 33), x in matrix(4, 2), seed in any::<u64>()) {
        let spec = small_spec();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = predict_bma(&spec, &Posterior::Mixture(q), &x, 8, &mut r).unwrap();
        for i in 0..4 {
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_component_prediction_matches_gaussian(g in gaussian(33), x in matrix(3, 2), seed in any::<u64>()) {
        let spec = small_spec();
        let m = Posterior::Mixture(GaussMixture::new(vec![0.0], vec![g.clone()]).unwrap());
        let a = predict_bma(&spec, &m, &x, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = predict_bma(&spec, &Posterior::Gaussian(g), &x, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn final_average_accuracy_ignores_test_set_order(acc in vec(0.0..=1.0f64, 1..6), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = acc.len();
        let row = |a: Vec<f64>| MetricsRow { method: "er".into(), task: n, accuracies: a };
        let mut shuffled = acc.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = final_average_accuracy(&[row(acc.clone())], n).unwrap();
        let b = final_average_accuracy(&[row(shuffled)], n).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((a - acc.iter().sum::<f64>() / n as f64).abs() <= 1e-12);
        prop_assert!(final_average_accuracy(&[], n).is_err());
    }

    #[test]
    fn metrics_files_round_trip(acc in vec(0.0..=1.0f64, 5)) {
        let rows: Vec<MetricsRow> = (1..=5)
            .map(|t| MetricsRow { method: "l-gm-sfsvi".into(), task: t, accuracies: acc[..t].to_vec() })
            .collect();
        let mut buf = vec![];
        write_metrics(&mut buf, &rows, 5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        prop_assert_eq!(text.lines().count(), 6);
        prop_assert!(text.starts_with("method,task,acc_1,acc_2,acc_3,acc_4,acc_5,avg\n"));
        let back = read_metrics(&text).unwrap();
        prop_assert_eq!(back.len(), 5);
        for (t, r) in back.iter().enumerate() {
            prop_assert_eq!(r.accuracies.len(), t + 1);
            prop_assert_eq!(&r.accuracies, &rows[t].accuracies);
        }
    }

    #[test]
    fn coreset_updates_add_exactly_per_task(n in 1usize..40, per in 0usize..40, seed in any::<u64>()) {
        prop_assume!(per <= n);
        let rows: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 0.5 * i as f64]).collect();
        let task = LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), vec![1; n]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let old = update_coreset(&Coreset::new(2), &task, 0, per.min(3), &mut r).unwrap();
        let new = update_coreset(&old, &task, 1, per, &mut r).unwrap();
        prop_assert_eq!(new.len(), old.len() + per);
        prop_assert_eq!(&new.entries()[..old.len()], old.entries());
        let mut inputs: Vec<usize> = new.entries()[old.len()..].iter().map(|e| e.input[0] as usize).collect();
        inputs.sort();
        inputs.dedup();
        prop_assert_eq!(inputs.len(), per);
        prop_assert!(update_coreset(&old, &task, 1, n + 1, &mut r).is_err());
    }

    #[test]
    fn uniform_inducing_points_stay_in_bounds(
        lo in vec(-5.0..5.0f64, 2),
        width in vec(0.0..3.0f64, 2),
        n in 1usize..30,
        seed in any::<u64>(),
    ) {
        let bounds: Vec<(f64, f64)> = lo.iter().zip(&width).map(|(l, w)| (*l, l + w)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ind = make_inducing(n, &bounds, &Coreset::new(2), InducingMode::Uniform, &mut r).unwrap();
        prop_assert_eq!(ind.len(), n);
        for i in 0..n {
            for (d, &v) in ind.points().row(i).iter().enumerate() {
                prop_assert!(bounds[d].0 <= v && v <= bounds[d].1);
            }
        }
        let origin = make_inducing(n, &[(0.0, 0.0), (0.0, 0.0)], &Coreset::new(2), InducingMode::Uniform, &mut r).unwrap();
        prop_assert!(origin.points().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exhaustive_coreset_inducing_draw(n in 1usize..20, seed in any::<u64>()) {
        let rows: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, -(i as f64)]).collect();
        let task = LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), vec![0; n]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let c = update_coreset(&Coreset::new(2), &task, 0, n, &mut r).unwrap();
        let ind = make_inducing(n, &[], &c, InducingMode::FromCoreset, &mut r).unwrap();
        let mut got: Vec<i64> = (0..n).map(|i| ind.points().row(i)[0] as i64).collect();
        got.sort();
        prop_assert_eq!(got, (0..n as i64).collect::<Vec<_>>());
        prop_assert!(make_inducing(n, &[], &Coreset::new(2), InducingMode::FromCoreset, &mut r).is_err());
    }

    #[test]
    fn grid_corners_equal_bounds(lo in vec(-5.0..5.0f64, 2), width in vec(0.1..3.0f64, 2), res in 2usize..12) {
        let b: Vec<(f64, f64)> = lo.iter().zip(&width).map(|(l, w)| (*l, l + w)).collect();
        let g = grid_lattice(&b, res).unwrap();
        prop_assert_eq!(g.rows(), res * res);
        prop_assert_eq!(g.row(0), &[b[0].0, b[1].0][..]);
        prop_assert_eq!(g.row(res - 1), &[b[0].1, b[1].0][..]);
        prop_assert_eq!(g.row(res * res - 1), &[b[0].1, b[1].1][..]);
    }

    #[test]
    fn one_cycle_stays_between_its_floor_and_peak(base in 1e-4..1.0f64, total in 1usize..500, step in 0usize..600) {
        let s = OneCycle::new(base, total);
        let lr = s.lr(step);
        prop_assert!(lr <= base * (1.0 + 1e-12));
        prop_assert!(lr >= base / OneCycle::FINAL_DIVISOR * (1.0 - 1e-12));
    }

    #[test]
    fn checkpoints_round_trip(q in mixture(2, 33), task in 1usize..10) {
        let c = Checkpoint { method: Method::PGmSfsvi, task, spec: small_spec(), posterior: Posterior::Mixture(q) };
        prop_assert_eq!(parse_checkpoint(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn configs_round_trip(
        method_ix in 0usize..13,
        k in 1usize..5,
        lr in 1e-4..1.0f64,
        epochs in 0usize..500,
        seed in any::<u64>(),
        iris in any::<bool>(),
    ) {
        let cfg = RunConfig {
            sequence: SequenceConfig::new(if iris { SequenceName::CiSplitIris2d } else { SequenceName::DiSinusoid }),
            trainer: TrainerConfig { k, base_lr: lr, epochs, seed, ..TrainerConfig::for_method(Method::ALL[method_ix]) },
            eval: EvalConfig::default(),
            output: Default::default(),
        };
        prop_assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parsers_never_panic(raw in ".{0,300}") {
        let _ = parse_iris(&raw);
        let _ = parse_checkpoint(&raw);
        let _ = parse_config(&raw);
        let _ = read_metrics(&raw);
    }
}
