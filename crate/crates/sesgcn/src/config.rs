//! The merged run configuration read from `--config` and echoed into every
//! run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sesgcn_core::collision::{ChainScript, CollisionConfig};
use sesgcn_core::data::{MotionParams, SkeletonTopology, SplitFractions};
use sesgcn_core::model::ModelConfig;
use sesgcn_core::sparsify::SparsifyConfig;
use sesgcn_core::training::TrainConfig;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences: usize,
    pub length: usize,
    pub fps: f64,
    pub seed: u64,
    pub motion: MotionParams,
    /// Skeleton to generate; the built-in 15-joint tree when absent.
    pub topology: Option<SkeletonTopology>,
    /// Link chains shared by every sequence. When present, `synth` writes a
    /// cobot file and labels collision frames geometrically.
    pub cobot: Option<Vec<ChainScript>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 60,
            length: 200,
            fps: 25.0,
            seed: 0,
            motion: MotionParams::default(),
            topology: None,
            cobot: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub cobot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: SplitFractions,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub stride: usize,
    /// Drop forecasting windows near labeled collisions.
    pub exclude_collisions: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            stride: 10,
            exclude_collisions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![10, 25],
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub trials: usize,
    /// Seed for the weights and the random input of the timed model.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            trials: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sparsify: SparsifyConfig,
    pub collision: CollisionConfig,
    pub synth: SynthConfig,
    pub data: DataPaths,
    pub split: SplitConfig,
    pub windows: WindowConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        crate::read_json(path)
    }

    /// Applies `--seed` to every seeded stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.bench.seed = seed;
    }

    /// Validates every section with its owning module.
    pub fn validate(&self) -> AppResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.sparsify.validate()?;
        self.collision.validate()?;
        let s = &self.synth;
        if s.sequences == 0 || s.length == 0 || !(s.fps.is_finite() && s.fps > 0.0) {
            return Err(AppError::Usage(
                "synth: sequences, length and fps must be positive".into(),
            ));
        }
        let topology = s.topology.clone().unwrap_or_else(SkeletonTopology::default_15);
        topology.validate()?;
        s.motion.validate(&topology)?;
        if self.windows.stride == 0 {
            return Err(AppError::Usage("windows: stride must be positive".into()));
        }
        if self.eval.batch_size == 0 || self.eval.horizons.is_empty() {
            return Err(AppError::Usage(
                "eval: batch_size and horizons must be non-empty".into(),
            ));
        }
        if let Some(h) = self
            .eval
            .horizons
            .iter()
            .find(|h| **h == 0 || **h > self.model.forecast_frames)
        {
            return Err(AppError::Usage(format!(
                "eval: horizon {h} outside 1..={}",
                self.model.forecast_frames
            )));
        }
        let f = self.split.fractions;
        if [f.train, f.validation, f.test].iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || ((f.train + f.validation + f.test) - 1.0).abs() > 1e-9
        {
            return Err(AppError::Usage(
                "split: fractions must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}
