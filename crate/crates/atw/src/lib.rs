//! Attention-weighted temporal consensus for multi-stream action recognition
//! on per-snippet feature vectors.
//!
//! A video is partitioned into segments, each segment contributes one
//! snippet feature row per modality, and a per-stream model scores the rows,
//! softmax-normalizes the scores into snippet weights, and aggregates the
//! weighted rows into a per-video prediction. Streams are trained
//! independently with SGD momentum and fused with weighted averaging at test
//! time. Every analytic gradient is validated against a central
//! finite-difference oracle.
//!
//! Per-video work inside batches and evaluations runs data-parallel via
//! rayon when the default `parallel` feature is enabled; reductions are
//! order-fixed, so results are bit-identical with or without it.

pub mod attention;
pub mod error;
pub mod exec;
pub mod features;
pub mod fusion;
pub mod gradcheck;
pub mod math;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use attention::{
    aggregate_attention, attention_backward, attention_forward, attention_scores,
    attention_weights, consensus, consensus_backward, consensus_probs, init_params,
    AttentionOutput, AttentionParams, Classifier, ConsensusKind, InitStrategy, Placement,
    StreamGradients, StreamModel,
};
pub use error::{Error, Result};
pub use features::{read_features, write_features, FeatureSet};
pub use fusion::{
    attention_csv, evaluate, export_attention, fuse_streams, AttentionRecord, EvalReport, EvalRow,
    FusionConfig,
};
pub use gradcheck::{run_gradcheck, GradCheckConfig, GradCheckReport};
pub use math::{
    activation, cross_entropy, finite_diff_grad, grad_rel_error, softmax, Activation, Matrix,
};
pub use pipeline::{
    load_features, partition_video, sample_snippet, Dataset, Modality, Segment, Snippet,
    VideoManifest, VideoRecord,
};
pub use synth::{generate_videos, synth_dataset, KeySegmentPolicy, SynthConfig};
pub use trainer::{
    lr_schedule, sgd_step, train_stream, train_stream_videos, write_trace, MomentumState, Stream,
    TraceRow, TrainConfig,
};
