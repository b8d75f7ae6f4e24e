//! TOML run configuration.
//!
//! ```toml
//! [sequence]
//! name = "ci-split-iris-2d"
//!
//! [trainer]
//! method = "l-gm-sfsvi"
//! seed = 0
//!
//! [eval]
//! prediction_samples = 64
//!
//! [output]
//! dir = "runs/iris-l-gm-sfsvi"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_sinusoid_with, load_iris_2d, SinusoidParams, TaskSequence, IRIS_CSV};
use crate::error::{Error, Result};
use crate::harness::EvalConfig;
use crate::methods::TrainerConfig;

/// Environment variable that overrides the output root of every run.
pub const OUT_ROOT_ENV: &str = "SEQVI_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceName {
    #[serde(rename = "ci-split-iris-2d")]
    CiSplitIris2d,
    #[serde(rename = "di-sinusoid")]
    DiSinusoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub name: SequenceName,
    /// Rescale inputs to zero mean and unit variance using the training
    /// inputs. Defaults to on for iris and off for the sinusoid.
    #[serde(default)]
    pub standardize: Option<bool>,
    #[serde(default)]
    pub sinusoid: SinusoidParams,
}

impl SequenceConfig {
    pub fn new(name: SequenceName) -> Self {
        SequenceConfig {
            name,
            standardize: None,
            sinusoid: SinusoidParams::default(),
        }
    }

    pub fn standardizes(&self) -> bool {
        self.standardize
            .unwrap_or(self.name == SequenceName::CiSplitIris2d)
    }

    /// Generate or load the sequence; data randomness comes from `seed`.
    pub fn build(&self, seed: u64) -> Result<TaskSequence> {
        let seq = match self.name {
            SequenceName::CiSplitIris2d => load_iris_2d(IRIS_CSV, seed)?,
            SequenceName::DiSinusoid => generate_sinusoid_with(&self.sinusoid, seed),
        };
        if self.standardizes() {
            seq.standardized()
        } else {
            Ok(seq)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths are resolved against the output root.
    pub dir: Option<PathBuf>,
}

/// One reproducible run. The trainer seed drives every random stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.eval.prediction_samples == 0 {
            return Err(Error::Config("prediction_samples must be positive".into()));
        }
        if self.eval.grid_resolution < 2 {
            return Err(Error::Config("grid_resolution must be at least 2".into()));
        }
        let s = &self.sequence.sinusoid;
        if self.sequence.name == SequenceName::DiSinusoid
            && (s.tasks == 0 || s.points_per_cell == 0 || !(s.sigma >= 0.0) || !s.offset.is_finite())
        {
            return Err(Error::Config("invalid sinusoid parameters".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialise")
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// Output directory: `root` joined with the configured directory, or
    /// `root/<sequence>-<method>-seed<seed>` when none is set.
    pub fn output_dir(&self, root: &Path) -> PathBuf {
        match &self.output.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => root.join(d),
            None => root.join(format!(
                "{}-{}-seed{}",
                sequence_label(self.sequence.name),
                self.trainer.method,
                self.trainer.seed
            )),
        }
    }
}

pub fn sequence_label(name: SequenceName) -> &'static str {
    match name {
        SequenceName::CiSplitIris2d => "ci-split-iris-2d",
        SequenceName::DiSinusoid => "di-sinusoid",
    }
}

pub fn parse_config(raw: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
