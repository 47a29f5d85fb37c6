//! Run configuration file: one JSON document driving train and eval.
//! Unknown keys are rejected so typos fail loudly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use atw::attention::{ConsensusKind, InitStrategy, Placement};
use atw::error::{Error, Result};
use atw::fusion::FusionConfig;
use atw::math::Activation;
use atw::trainer::{Stream, TrainConfig};

/// Per-stream optimization settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamTrain {
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub max_iterations: u64,
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub spatial: StreamTrain,
    pub flow: StreamTrain,
    pub warped_flow: StreamTrain,
}

impl TrainSection {
    pub fn get(&self, stream: Stream) -> &StreamTrain {
        match stream {
            Stream::Spatial => &self.spatial,
            Stream::Flow => &self.flow,
            Stream::WarpedFlow => &self.warped_flow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Ones,
    UniformInvN,
    Gaussian,
}

impl InitKind {
    /// Resolve to a concrete strategy; `uniform_inv_n` divides by the
    /// dataset's segment count.
    pub fn resolve(self, num_segments: usize) -> InitStrategy {
        match self {
            InitKind::Ones => InitStrategy::Ones,
            InitKind::UniformInvN => InitStrategy::UniformInvN { n: num_segments },
            InitKind::Gaussian => InitStrategy::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Videos used for training, taken from the front of the dataset.
    pub train_count: usize,
    /// Videos used for evaluation, following the train split. Absent means
    /// everything after the train split.
    #[serde(default)]
    pub test_count: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub consensus: ConsensusKind,
    pub init: InitKind,
    pub activation: Activation,
    pub placement: Placement,
    pub train: TrainSection,
    pub fusion: FusionConfig,
    /// Snippets per video during training; absent means every feature row.
    #[serde(default)]
    pub num_segments: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // a malformed or mistyped config is a usage problem, not a data error
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !config.dataset_dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset_dir {} is not a directory",
                config.dataset_dir.display()
            )));
        }
        if config.train_count == 0 {
            return Err(Error::Config("train_count must be positive".into()));
        }
        Ok(config)
    }

    pub fn train_config(&self, stream: Stream, seed: u64) -> TrainConfig {
        let entry = self.train.get(stream);
        TrainConfig {
            stream,
            batch_size: entry.batch_size,
            base_lr: entry.base_lr,
            momentum: entry.momentum,
            max_iterations: entry.max_iterations,
            consensus: self.consensus,
            num_segments: self.num_segments,
            seed,
        }
    }
}
