//! Test-time pipeline: per-stream consensus prediction, weighted multi-stream
//! fusion, accuracy reporting, and attention-weight export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_scores, attention_weights, consensus, consensus_probs, ConsensusKind, StreamModel,
};
use crate::error::{Error, Result};
use crate::exec::ordered_map;
use crate::features::FeatureSet;
use crate::pipeline::{partition_video, sample_snippet, Snippet, VideoRecord};
use crate::trainer::Stream;

/// Per-stream fusion weights and test-time sampling configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Stream weights; streams with weight 0 are skipped entirely.
    pub weights: BTreeMap<Stream, f64>,
    /// Snippets sampled per video at test time, capped at the available
    /// feature rows.
    pub test_snippet_count: usize,
    /// Divide the fused scores by the total weight. Never changes the argmax.
    pub normalize: bool,
    /// Fuse pre-softmax consensus scores instead of probabilities.
    #[serde(default)]
    pub fuse_logits: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(Stream::Spatial, 1.0);
        weights.insert(Stream::Flow, 1.0);
        weights.insert(Stream::WarpedFlow, 0.5);
        FusionConfig {
            weights,
            test_snippet_count: 80,
            normalize: true,
            fuse_logits: false,
        }
    }
}

impl FusionConfig {
    /// Streams that participate in fusion, in a fixed order.
    pub fn active_streams(&self) -> Vec<Stream> {
        Stream::ALL
            .into_iter()
            .filter(|s| self.weights.get(s).copied().unwrap_or(0.0) != 0.0)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !self.weights.values().any(|w| *w > 0.0) {
            return Err(Error::Config(
                "fusion needs at least one positive weight".into(),
            ));
        }
        if self.weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "fusion weights must be finite and non-negative".into(),
            ));
        }
        if self.test_snippet_count == 0 {
            return Err(Error::Config("test_snippet_count must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted sum of per-stream score vectors: `Σ weight_s · scores_s`,
/// divided by the total weight when `normalize` is on.
pub fn fuse_streams(
    per_stream_scores: &BTreeMap<Stream, Vec<f64>>,
    config: &FusionConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut fused: Option<Vec<f64>> = None;
    let mut total_weight = 0.0;
    for stream in config.active_streams() {
        let weight = config.weights[&stream];
        let scores = per_stream_scores
            .get(&stream)
            .ok_or(Error::MissingStream(stream))?;
        match &mut fused {
            None => fused = Some(scores.iter().map(|s| weight * s).collect()),
            Some(acc) => {
                if acc.len() != scores.len() {
                    return Err(Error::DimMismatch {
                        what: "fusion score length",
                        expected: acc.len(),
                        got: scores.len(),
                    });
                }
                for (a, s) in acc.iter_mut().zip(scores) {
                    *a += weight * s;
                }
            }
        }
        total_weight += weight;
    }
    let mut fused = fused.expect("validate guarantees an active stream");
    if config.normalize {
        for v in &mut fused {
            *v /= total_weight;
        }
    }
    Ok(fused)
}

/// One evaluated video.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub video_id: String,
    pub true_label: usize,
    pub predicted: usize,
    pub fused_scores: Vec<f64>,
}

/// Aggregate evaluation results.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub consensus: ConsensusKind,
    pub num_videos: usize,
    pub accuracy: f64,
    /// Per-class accuracy; `None` for classes with no test instances.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub rows: Vec<EvalRow>,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate() {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}

/// Uniformly sample `count` test rows (at most one per row-group) from the
/// available rows, deterministic for a given per-video rng.
fn sample_test_rows(available: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let take = count.min(available);
    let groups = partition_video(available, take)?;
    Ok(groups
        .iter()
        .map(|g| {
            use rand::Rng;
            rng.gen_range(g.start_frame..g.end_frame)
        })
        .collect())
}

fn per_video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // distinct, order-independent stream per video so evaluation can run in
    // parallel without sharing rng state
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Evaluate fused streams over a dataset slice. Per-video work may run in
/// parallel; rows are reduced in dataset order, so reports are deterministic
/// for a given seed.
pub fn evaluate(
    models: &BTreeMap<Stream, StreamModel>,
    videos: &[VideoRecord],
    config: &FusionConfig,
    kind: ConsensusKind,
    seed: u64,
) -> Result<EvalReport> {
    config.validate()?;
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let active = config.active_streams();
    for stream in &active {
        if !models.contains_key(stream) {
            return Err(Error::MissingStream(*stream));
        }
    }

    let indexed: Vec<(usize, &VideoRecord)> = videos.iter().enumerate().collect();
    let results: Vec<Result<EvalRow>> = ordered_map(&indexed, |&(index, video)| {
        let mut rng = per_video_rng(seed, index);
        let rows = sample_test_rows(
            video.manifest.num_segments,
            config.test_snippet_count,
            &mut rng,
        )?;
        let mut per_stream = BTreeMap::new();
        for stream in &active {
            let features = video.features(stream.modality())?.select_rows(&rows)?;
            let model = &models[stream];
            let scores = if config.fuse_logits {
                consensus(kind, model, &features)?
            } else {
                consensus_probs(kind, model, &features)?
            };
            per_stream.insert(*stream, scores);
        }
        let fused = fuse_streams(&per_stream, config)?;
        Ok(EvalRow {
            video_id: video.manifest.video_id.clone(),
            true_label: video.manifest.label,
            predicted: argmax(&fused),
            fused_scores: fused,
        })
    });

    let rows: Vec<EvalRow> = results.into_iter().collect::<Result<_>>()?;
    let num_classes = rows
        .iter()
        .map(|r| r.true_label + 1)
        .max()
        .unwrap_or(0)
        .max(rows.iter().map(|r| r.fused_scores.len()).max().unwrap_or(0));
    let mut correct = 0usize;
    let mut class_total = vec![0usize; num_classes];
    let mut class_correct = vec![0usize; num_classes];
    for row in &rows {
        class_total[row.true_label] += 1;
        if row.predicted == row.true_label {
            correct += 1;
            class_correct[row.true_label] += 1;
        }
    }
    let per_class_accuracy = class_total
        .iter()
        .zip(&class_correct)
        .map(|(&total, &good)| {
            if total == 0 {
                None
            } else {
                Some(good as f64 / total as f64)
            }
        })
        .collect();
    Ok(EvalReport {
        consensus: kind,
        num_videos: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        per_class_accuracy,
        rows,
    })
}

impl EvalReport {
    /// Write the JSON summary (accuracy fields, no per-video rows).
    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            consensus: ConsensusKind,
            num_videos: usize,
            accuracy: f64,
            per_class_accuracy: &'a [Option<f64>],
        }
        let summary = Summary {
            consensus: self.consensus,
            num_videos: self.num_videos,
            accuracy: self.accuracy,
            per_class_accuracy: &self.per_class_accuracy,
        };
        let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Write per-video rows as CSV: id, labels, and fused scores.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("video_id,true_label,predicted,fused_scores\n");
        for row in &self.rows {
            let scores = row
                .fused_scores
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            text.push_str(&format!(
                "{},{},{},{}\n",
                row.video_id, row.true_label, row.predicted, scores
            ));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One exported attention record: which frames the snippet references and the
/// weight the model assigns to it.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub snippet: Snippet,
    pub weight: f64,
}

/// Attention weights for every snippet of one video, with frame indices
/// sampled from the video's segments. Weights come from the same score and
/// softmax path the consensus uses.
pub fn export_attention(
    model: &StreamModel,
    video: &VideoRecord,
    features: &FeatureSet,
    seed: u64,
) -> Result<Vec<AttentionRecord>> {
    let scores = attention_scores(&model.attention, features)?;
    let weights = attention_weights(&scores)?;
    let segments = partition_video(video.manifest.num_frames, features.rows())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = segments
        .iter()
        .zip(weights)
        .map(|(segment, weight)| AttentionRecord {
            snippet: sample_snippet(segment, video.manifest.num_frames, &mut rng),
            weight,
        })
        .collect();
    Ok(records)
}

/// Render attention records as CSV, sorted by snippet index.
pub fn attention_csv(records: &[AttentionRecord]) -> String {
    let mut sorted: Vec<&AttentionRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.snippet.segment_index);
    let mut text = String::from("snippet_index,rgb_frame,flow_start,warped_flow_start,weight\n");
    for record in sorted {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            record.snippet.segment_index,
            record.snippet.rgb_frame,
            record.snippet.flow_start,
            record.snippet.warped_flow_start,
            record.weight
        ));
    }
    text
}

/// Attention weights over all rows of one feature set, as the eval path
/// computes them.
pub fn video_attention_weights(model: &StreamModel, features: &FeatureSet) -> Result<Vec<f64>> {
    attention_weights(&attention_scores(&model.attention, features)?)
}
