//! Five-seed reference runs of every method on both desk-scale sequences.
//!
//! `cargo run --release -p seqvi --example reference_runs > reference-runs.md`

use std::time::Instant;

use seqvi::config::{sequence_label, SequenceConfig, SequenceName};
use seqvi::harness::{run_sequence, EvalConfig};
use seqvi::methods::{Method, TrainerConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

const FROZEN: &str = "\
## Frozen thresholds

Set from the tables above and pinned in `crates/core/tests/acceptance.rs`.
Every threshold applies to the five-seed mean.

- Iris fine-tune FAA ≤ 0.45 (measured 0.333).
- Iris l-gm-sfsvi and p-gm-sfsvi FAA ≥ 0.85 and ≥ fine-tune + 0.35 (measured 0.973 and 0.867).
- Iris joint-map FAA ≥ 0.90 (measured 0.967).
- Iris task 2 accuracy of gm-sfsvi ≥ g-sfsvi for both the p and l forms (measured 1.000 vs 1.000 and 0.960 vs 0.960).
- Sinusoid l-g-sfsvi and l-gm-sfsvi FAA ≥ p-g-vcl, p-gm-vcl and fine-tune.
- Each l method ≥ its p counterpart on both sequences.
  This fails on the sinusoid for the sfsvi pairs.
  All four sfsvi runs sit at ≥ 0.999, and l trails p by 0.0002, about one test point over five seeds.
  The acceptance test reports this as a FAIL and pins the two pairs as known.
";

fn main() -> seqvi::Result<()> {
    let eval = EvalConfig::default();
    println!("# Reference runs\n");
    println!("Default configs (base_lr 0.1, batch 16, 100 epochs, coreset 16 per task, k = 3), seeds {SEEDS:?}.");
    println!("EWC and SI use lambda_reg = 100 and xi = 1 without tuning.\n");
    for name in [SequenceName::CiSplitIris2d, SequenceName::DiSinusoid] {
        let seq_cfg = SequenceConfig::new(name);
        println!("## {}\n", sequence_label(name));
        println!("| method | FAA per seed | mean FAA | mean final accuracy per task | seconds |");
        println!("|---|---|---|---|---|");
        for method in Method::ALL {
            let start = Instant::now();
            let mut faas = vec![];
            let mut per_task: Vec<f64> = vec![];
            for seed in SEEDS {
                let seq = seq_cfg.build(seed)?;
                let cfg = TrainerConfig {
                    seed,
                    ..TrainerConfig::for_method(method)
                };
                let out = run_sequence(&seq, &cfg, &eval)?;
                faas.push(out.final_average_accuracy()?);
                let last = &out.test_rows.last().expect("rows").accuracies;
                per_task.resize(last.len(), 0.0);
                for (a, v) in per_task.iter_mut().zip(last) {
                    *a += v / SEEDS.len() as f64;
                }
            }
            let mean = faas.iter().sum::<f64>() / faas.len() as f64;
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
            println!(
                "| {method} | {} | {mean:.4} | {} | {:.1} |",
                fmt(&faas),
                fmt(&per_task),
                start.elapsed().as_secs_f64()
            );
        }
        println!();
    }
    print!("{FROZEN}");
    Ok(())
}
