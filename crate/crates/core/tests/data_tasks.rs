use std::collections::BTreeSet;

use seqvi::data::{
    generate_sinusoid, generate_sinusoid_with, input_bounds, load_iris_2d, parse_iris, Setting, SinusoidParams,
    IRIS_CSV,
};
use seqvi::Error;

#[test]
fn sinusoid_cells_have_100_points_per_class() {
    let seq = generate_sinusoid(0);
    assert_eq!(seq.num_tasks(), 5);
    assert_eq!(seq.setting, Setting::DomainIncremental);
    for t in &seq.tasks {
        for ds in [&t.train, &t.validation, &t.test] {
            assert_eq!(ds.len(), 200);
            assert_eq!(ds.labels().iter().filter(|&&y| y == 1).count(), 100);
            assert_eq!(ds.label_set(), BTreeSet::from([0, 1]));
        }
    }
    assert_eq!(generate_sinusoid(0), seq);
    assert_ne!(generate_sinusoid(1), seq);
}

#[test]
fn sinusoid_cell_means_sit_on_the_configured_means() {
    let p = SinusoidParams::default();
    let seq = generate_sinusoid_with(&p, 3);
    let tol = 4.0 * p.sigma / (p.points_per_cell as f64).sqrt();
    for (t, task) in seq.tasks.iter().enumerate() {
        for ds in [&task.train, &task.validation, &task.test] {
            for c in 0..2 {
                let rows: Vec<&[f64]> = (0..ds.len())
                    .filter(|&i| ds.labels()[i] == c)
                    .map(|i| ds.inputs().row(i))
                    .collect();
                let want = p.class_mean(t, c);
                for d in 0..2 {
                    let m = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
                    assert!((m - want[d]).abs() <= tol, "task {t} class {c} dim {d}: {m} vs {}", want[d]);
                }
            }
        }
    }
}

fn rows_of(ds: &seqvi::data::LabeledDataset) -> Vec<(u64, u64, usize)> {
    (0..ds.len())
        .map(|i| {
            let r = ds.inputs().row(i);
            (r[0].to_bits(), r[1].to_bits(), ds.labels()[i])
        })
        .collect()
}

#[test]
fn iris_split_sizes_and_partition() {
    let seq = load_iris_2d(IRIS_CSV, 0).unwrap();
    assert_eq!(seq.num_tasks(), 3);
    assert_eq!(seq.setting, Setting::ClassIncremental);
    let total = |f: fn(&seqvi::data::TaskSplit) -> usize| seq.tasks.iter().map(f).sum::<usize>();
    assert_eq!(total(|t| t.train.len()), 96);
    assert_eq!(total(|t| t.validation.len()), 24);
    assert_eq!(total(|t| t.test.len()), 30);

    let mut seen = BTreeSet::new();
    for (i, t) in seq.tasks.iter().enumerate() {
        for ds in [&t.train, &t.validation, &t.test] {
            assert_eq!(ds.label_set(), BTreeSet::from([i]));
        }
        assert!(seen.insert(i));
    }
    assert_eq!(seen.len(), seq.class_universe.len());

    // Union of splits is the original multiset of (petal length, petal width, class).
    let table = parse_iris(IRIS_CSV).unwrap();
    let mut original: Vec<(u64, u64, usize)> = table
        .features
        .iter()
        .zip(&table.classes)
        .map(|(f, c)| (f[2].to_bits(), f[3].to_bits(), seq.class_universe.iter().position(|u| u == c).unwrap()))
        .collect();
    let mut union: Vec<_> = seq
        .tasks
        .iter()
        .flat_map(|t| [&t.train, &t.validation, &t.test])
        .flat_map(rows_of)
        .collect();
    original.sort();
    union.sort();
    assert_eq!(union, original);
    assert_eq!(load_iris_2d(IRIS_CSV, 0).unwrap(), seq);
}

#[test]
fn iris_parse_errors_carry_line_numbers() {
    let header = "sepal_length,sepal_width,petal_length,petal_width,class\n";
    let bad = format!("{header}5.1,3.5,1.4,0.2,Iris-setosa\n\n4.9,oops,1.4,0.2,Iris-setosa\n");
    match parse_iris(&bad) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    match parse_iris("5.1,3.5,1.4,0.2,Iris-setosa\n5.1,3.5,1.4\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_iris_2d(&format!("{header}5.1,3.5,1.4,0.2,a\n"), 0), Err(Error::Domain(_))));
}

#[test]
fn bounds_cover_training_inputs_and_widen_with_tasks() {
    let mut seq = generate_sinusoid(5);
    let b = input_bounds(&seq).unwrap();
    for t in &seq.tasks {
        for i in 0..t.train.len() {
            for (d, &v) in t.train.inputs().row(i).iter().enumerate() {
                assert!(b[d].0 <= v && v <= b[d].1);
            }
        }
    }
    seq.tasks.pop();
    let smaller = input_bounds(&seq).unwrap();
    for d in 0..2 {
        assert!(b[d].0 <= smaller[d].0 && smaller[d].1 <= b[d].1);
    }

    let single = seqvi::data::LabeledDataset::new(seqvi::autodiff::Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap(), vec![0])
        .unwrap();
    seq.tasks = vec![seqvi::data::TaskSplit {
        train: single.clone(),
        validation: single.clone(),
        test: single,
    }];
    assert_eq!(input_bounds(&seq).unwrap(), vec![(0.5, 0.5), (-2.0, -2.0)]);
}

#[test]
fn standardised_training_inputs_have_unit_moments() {
    let seq = load_iris_2d(IRIS_CSV, 2).unwrap().standardized().unwrap();
    for (m, s) in seq.train_moments().unwrap() {
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn export_writes_every_split() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate_sinusoid(0);
    seq.export_csv(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("di-sinusoid_task3_test.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,label"));
    assert_eq!(lines.count(), 200);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 15);
}
