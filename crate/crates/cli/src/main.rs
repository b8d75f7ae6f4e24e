use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqvi::checkpoint::Checkpoint;
use seqvi::config::{RunConfig, OUT_ROOT_ENV};
use seqvi::data::input_bounds;
use seqvi::harness::{self, GRID_FILE};
use seqvi::rng::{substream, Stream};
use seqvi::Error;

#[derive(Parser)]
#[command(name = "seqvi", version, about = "Sequential variational continual learning experiments")]
struct Cli {
    /// Override the seed of every config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; defaults to $SEQVI_OUT_ROOT, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one config.
    Run { config: PathBuf },
    /// Run every *.toml config in a directory and summarise final accuracies.
    Sweep {
        config_dir: PathBuf,
        /// Tune EWC/SI regularisation on validation accuracy first.
        #[arg(long)]
        tune: bool,
    },
    /// Write the prediction grid of a saved checkpoint.
    Grid { checkpoint: PathBuf, config: PathBuf },
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.trainer.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = out_root(cli.out);
    let result = match cli.command {
        Command::Run { config } => load(&config, cli.seed).and_then(|cfg| {
            let dir = cfg.output_dir(&root);
            let out = harness::run(&cfg, &dir)?;
            println!(
                "{} {}: final average accuracy {:.4} ({})",
                seqvi::config::sequence_label(cfg.sequence.name),
                cfg.trainer.method,
                out.final_average_accuracy()?,
                dir.display()
            );
            Ok(())
        }),
        Command::Sweep { config_dir, tune } => (|| {
            let mut configs = vec![];
            for path in harness::config_files(&config_dir)? {
                let mut cfg = load(&path, cli.seed)?;
                if tune {
                    let seq = cfg.sequence.build(cfg.trainer.seed)?;
                    cfg.trainer = harness::tune_regularisation(&seq, &cfg.trainer, &cfg.eval)?;
                }
                configs.push((path, cfg));
            }
            if configs.is_empty() {
                return Err(Error::Config(format!("no .toml configs in {}", config_dir.display())));
            }
            for e in harness::sweep(&configs, &root)? {
                println!("{} {} seed {}: {:.4}", e.sequence, e.method, e.seed, e.final_average_accuracy);
            }
            Ok(())
        })(),
        Command::Grid { checkpoint, config } => load(&config, cli.seed).and_then(|cfg| {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let seq = cfg.sequence.build(cfg.trainer.seed)?;
            let bounds = input_bounds(&seq)?;
            let dir = cfg.output_dir(&root);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(GRID_FILE);
            let mut rng = substream(cfg.trainer.seed, Stream::Grid);
            harness::export_grid(
                &ckpt.spec,
                &ckpt.posterior,
                &bounds,
                cfg.eval.grid_resolution,
                cfg.eval.prediction_samples,
                &mut rng,
                &path,
            )?;
            println!("{}", path.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
