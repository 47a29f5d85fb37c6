//! Per-stream optimization: mini-batch SGD with momentum and step learning
//! rate schedules, over consensus cross-entropy on per-snippet features.
//!
//! Per-video forward/backward passes inside a batch run through
//! [`crate::exec::ordered_map`], and the batch reduction folds the ordered
//! results sequentially, so training is deterministic for a given seed no
//! matter how many threads are available.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{consensus_backward, ConsensusKind, StreamGradients, StreamModel};
use crate::error::{Error, Result};
use crate::exec::ordered_map;
use crate::features::FeatureSet;
use crate::pipeline::{partition_video, Dataset, Modality, VideoRecord};

/// The three model streams; spatial consumes RGB features, the other two the
/// flow modalities. The learning rate decay pattern differs between the
/// spatial stream and the temporal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Spatial,
    Flow,
    WarpedFlow,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Spatial, Stream::Flow, Stream::WarpedFlow];

    pub fn modality(self) -> Modality {
        match self {
            Stream::Spatial => Modality::Rgb,
            Stream::Flow => Modality::Flow,
            Stream::WarpedFlow => Modality::WarpedFlow,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Spatial => "spatial",
            Stream::Flow => "flow",
            Stream::WarpedFlow => "warped_flow",
        }
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Stream::Spatial),
            "flow" => Ok(Stream::Flow),
            "warped_flow" => Ok(Stream::WarpedFlow),
            other => Err(Error::invalid(format!("unknown stream {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stream: Stream,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub max_iterations: u64,
    pub consensus: ConsensusKind,
    /// Snippets drawn per video each iteration. `None` uses every available
    /// feature row; `Some(n)` partitions the rows into `n` groups and samples
    /// one row per group, mirroring segment-level snippet sampling.
    pub num_segments: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.base_lr < 0.0 || !self.base_lr.is_finite() {
            return Err(Error::invalid("base_lr must be non-negative"));
        }
        Ok(())
    }
}

/// Step learning rate schedule.
///
/// Spatial: multiplied by 0.1 every 2000 iterations. Temporal streams:
/// multiplied by 0.1 once at iteration 12000 and again at 18000.
pub fn lr_schedule(stream: Stream, base_lr: f64, iteration: u64) -> f64 {
    match stream {
        Stream::Spatial => base_lr * 0.1f64.powi((iteration / 2000) as i32),
        Stream::Flow | Stream::WarpedFlow => {
            let decays = u64::from(iteration >= 12_000) + u64::from(iteration >= 18_000);
            base_lr * 0.1f64.powi(decays as i32)
        }
    }
}

/// Velocity buffers for SGD momentum, shape-matched to a [`StreamModel`] and
/// zero-initialized.
#[derive(Debug, Clone)]
pub struct MomentumState {
    velocity: StreamGradients,
}

impl MomentumState {
    pub fn zeros(model: &StreamModel) -> Self {
        MomentumState {
            velocity: StreamGradients::zeros(model),
        }
    }
}

/// One SGD momentum update: `v ← momentum·v − lr·g; p ← p + v` for every
/// parameter array.
pub fn sgd_step(
    model: &mut StreamModel,
    grads: &StreamGradients,
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            detail: "non-finite gradient".into(),
        });
    }
    let v = &mut state.velocity;
    let update = |param: &mut [f64], grad: &[f64], vel: &mut [f64]| {
        for ((p, &g), vk) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *vk = momentum * *vk - lr * g;
            *p += *vk;
        }
    };
    update(
        &mut model.attention.weight,
        &grads.attention_weight,
        &mut v.attention_weight,
    );
    {
        let vb = &mut v.attention_bias;
        *vb = momentum * *vb - lr * grads.attention_bias;
        model.attention.bias += *vb;
    }
    update(
        model.classifier.weight.data_mut(),
        grads.classifier_weight.data(),
        v.classifier_weight.data_mut(),
    );
    update(
        &mut model.classifier.bias,
        &grads.classifier_bias,
        &mut v.classifier_bias,
    );
    Ok(())
}

/// One row of the training loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub lr: f64,
    pub batch_loss: f64,
}

/// Write a loss trace as `iteration,lr,batch_loss` CSV.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut text = String::from("iteration,lr,batch_loss\n");
    for row in trace {
        text.push_str(&format!(
            "{},{},{}\n",
            row.iteration, row.lr, row.batch_loss
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Select the feature rows one video contributes this iteration: all rows by
/// default, or one uniformly chosen row per row-group when training with
/// fewer segments than available rows.
fn select_rows<R: Rng>(
    total_rows: usize,
    segments: Option<usize>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match segments {
        None => Ok((0..total_rows).collect()),
        Some(n) => {
            let groups = partition_video(total_rows, n)?;
            Ok(groups
                .iter()
                .map(|g| rng.gen_range(g.start_frame..g.end_frame))
                .collect())
        }
    }
}

/// Mean loss and mean gradients over one batch of (features, label) pairs.
/// The per-video backward passes may run in parallel; the reduction is a
/// sequential fold in batch order.
fn batch_backward(
    model: &StreamModel,
    batch: &[(FeatureSet, usize)],
    kind: ConsensusKind,
) -> Result<(f64, StreamGradients)> {
    let per_video = ordered_map(batch, |(features, label)| {
        consensus_backward(kind, model, features, *label)
    });
    let mut total = StreamGradients::zeros(model);
    let mut loss_sum = 0.0;
    for result in per_video {
        let backward = result?;
        loss_sum += backward.loss;
        total.add(&backward.grads);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((loss_sum * scale, total))
}

/// Train one stream with mini-batch SGD. Batches are drawn from a seeded
/// shuffle, re-shuffled each epoch; the loss trace records every iteration.
pub fn train_stream(
    config: &TrainConfig,
    dataset: &Dataset,
    model: StreamModel,
) -> Result<(StreamModel, Vec<TraceRow>)> {
    train_stream_videos(config, &dataset.videos, model)
}

/// [`train_stream`] over an explicit video slice (e.g. a train split).
pub fn train_stream_videos(
    config: &TrainConfig,
    videos: &[VideoRecord],
    mut model: StreamModel,
) -> Result<(StreamModel, Vec<TraceRow>)> {
    config.validate()?;
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let modality = config.stream.modality();
    let stream_features: Vec<(&FeatureSet, usize)> = videos
        .iter()
        .map(|v| Ok((v.features(modality)?, v.manifest.label)))
        .collect::<Result<_>>()?;
    for (features, _) in &stream_features {
        if features.dim() != model.feature_dim() {
            return Err(Error::DimMismatch {
                what: "dataset features vs model",
                expected: model.feature_dim(),
                got: features.dim(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = MomentumState::zeros(&model);
    let mut trace = Vec::with_capacity(config.max_iterations as usize);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut cursor = order.len(); // forces a shuffle before the first batch

    let mut iteration = 0;
    while iteration < config.max_iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        // Row selection is drawn sequentially from the master rng before the
        // (possibly parallel) backward passes, keeping the stream stable.
        let batch: Vec<(FeatureSet, usize)> = order[cursor..end]
            .iter()
            .map(|&video_index| {
                let (features, label) = stream_features[video_index];
                let rows = select_rows(features.rows(), config.num_segments, &mut rng)?;
                Ok((features.select_rows(&rows)?, label))
            })
            .collect::<Result<_>>()?;
        cursor = end;

        let lr = lr_schedule(config.stream, config.base_lr, iteration);
        let (batch_loss, grads) = batch_backward(&model, &batch, config.consensus)?;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                iteration,
                detail: format!("batch loss {batch_loss}"),
            });
        }
        sgd_step(&mut model, &grads, &mut state, lr, config.momentum).map_err(|_| {
            Error::Diverged {
                iteration,
                detail: "non-finite gradient".into(),
            }
        })?;
        trace.push(TraceRow {
            iteration,
            lr,
            batch_loss,
        });
        iteration += 1;
    }
    Ok((model, trace))
}
