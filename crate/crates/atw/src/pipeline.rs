//! Segment partitioning, snippet sampling, and dataset manifests.
//!
//! A video is evenly split into non-overlapping segments; each segment
//! contributes one snippet (an RGB frame plus two 5-frame flow stacks). The
//! per-snippet action features themselves come from files, one row per
//! snippet, so the feature extractor is abstracted behind [`FeatureSet`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureSet};

/// Number of stacked flow frames per snippet.
pub const FLOW_STACK: usize = 5;

/// One of the three input modalities a stream consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Rgb,
    Flow,
    WarpedFlow,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Flow, Modality::WarpedFlow];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
            Modality::WarpedFlow => "warped_flow",
        }
    }
}

/// Per-modality feature file locations, relative to the dataset root so a
/// dataset directory can be moved or compared byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePaths {
    pub rgb: String,
    pub flow: String,
    pub warped_flow: String,
}

impl FeaturePaths {
    pub fn get(&self, modality: Modality) -> &str {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Flow => &self.flow,
            Modality::WarpedFlow => &self.warped_flow,
        }
    }
}

/// A video's identity, label, and where its per-snippet features live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub num_frames: usize,
    pub label: usize,
    pub num_segments: usize,
    pub feature_paths: FeaturePaths,
    /// Index of the planted discriminative segment; synthetic datasets only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_segment: Option<usize>,
}

impl VideoManifest {
    fn validate(&self) -> Result<()> {
        if self.num_segments == 0 || self.num_segments > self.num_frames {
            return Err(Error::invalid(format!(
                "manifest {}: {} segments for {} frames",
                self.video_id, self.num_segments, self.num_frames
            )));
        }
        Ok(())
    }
}

/// A half-open frame range `[start_frame, end_frame)` within one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.start_frame >= self.end_frame
    }
}

/// Frame indices sampled from one segment across the three modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snippet {
    pub segment_index: usize,
    pub rgb_frame: usize,
    pub flow_start: usize,
    pub warped_flow_start: usize,
    /// Actual flow stack length; shorter than [`FLOW_STACK`] only for videos
    /// with fewer than five frames, where the stack is truncated.
    pub flow_stack_len: usize,
}

impl Snippet {
    pub fn is_truncated(&self) -> bool {
        self.flow_stack_len < FLOW_STACK
    }
}

/// Evenly partition `num_frames` frames into `n_segments` disjoint segments
/// covering the whole video. The first `num_frames % n_segments` segments
/// receive one extra frame.
pub fn partition_video(num_frames: usize, n_segments: usize) -> Result<Vec<Segment>> {
    if n_segments == 0 {
        return Err(Error::invalid("segment count must be positive"));
    }
    if n_segments > num_frames {
        return Err(Error::invalid(format!(
            "cannot split {num_frames} frames into {n_segments} segments"
        )));
    }
    let base = num_frames / n_segments;
    let remainder = num_frames % n_segments;
    let mut segments = Vec::with_capacity(n_segments);
    let mut start = 0;
    for index in 0..n_segments {
        let len = base + usize::from(index < remainder);
        segments.push(Segment {
            index,
            start_frame: start,
            end_frame: start + len,
        });
        start += len;
    }
    Ok(segments)
}

/// Sample one snippet from a segment: a uniform RGB frame, and uniform flow
/// stack starts clamped backward so a full stack fits inside the video.
/// Videos shorter than the stack keep start 0 and record the truncated length.
pub fn sample_snippet<R: Rng>(segment: &Segment, num_frames: usize, rng: &mut R) -> Snippet {
    let rgb_frame = rng.gen_range(segment.start_frame..segment.end_frame);
    let stack_len = FLOW_STACK.min(num_frames);
    let max_start = num_frames - stack_len;
    let mut draw_start = || -> usize {
        let raw = rng.gen_range(segment.start_frame..segment.end_frame);
        raw.min(max_start)
    };
    let flow_start = draw_start();
    let warped_flow_start = draw_start();
    Snippet {
        segment_index: segment.index,
        rgb_frame,
        flow_start,
        warped_flow_start,
        flow_stack_len: stack_len,
    }
}

/// Read one manifest from a JSON file.
pub fn read_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: VideoManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Write one manifest as pretty JSON (stable field order, deterministic bytes).
pub fn write_manifest(path: &Path, manifest: &VideoManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load the features behind one manifest modality, validating the on-disk
/// shape against the manifest's segment count.
pub fn load_features(
    root: &Path,
    manifest: &VideoManifest,
    modality: Modality,
) -> Result<FeatureSet> {
    let rel = manifest.feature_paths.get(modality);
    let path = root.join(rel);
    let set = features::read_features(&path, modality)?;
    if set.rows() != manifest.num_segments {
        return Err(Error::ShapeMismatch {
            path,
            detail: format!(
                "{} rows on disk but manifest {} declares {} segments",
                set.rows(),
                manifest.video_id,
                manifest.num_segments
            ),
        });
    }
    Ok(set)
}

/// A fully loaded video: manifest plus per-modality feature matrices.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub manifest: VideoManifest,
    pub features: BTreeMap<Modality, FeatureSet>,
}

impl VideoRecord {
    pub fn features(&self, modality: Modality) -> Result<&FeatureSet> {
        self.features
            .get(&modality)
            .ok_or(Error::MissingModality(modality))
    }
}

/// An in-memory dataset: every manifest under `<root>/manifests/` with all
/// three modalities loaded eagerly.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_dir = root.join("manifests");
        let mut paths: Vec<PathBuf> = fs::read_dir(&manifest_dir)
            .map_err(|e| Error::io(&manifest_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        // directory iteration order is platform-defined; sort for determinism
        paths.sort();
        let mut videos = Vec::with_capacity(paths.len());
        for path in paths {
            let manifest = read_manifest(&path)?;
            let mut loaded = BTreeMap::new();
            for modality in Modality::ALL {
                loaded.insert(modality, load_features(root, &manifest, modality)?);
            }
            videos.push(VideoRecord {
                manifest,
                features: loaded,
            });
        }
        if videos.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            videos,
        })
    }

    /// Number of classes implied by the labels present.
    pub fn num_classes(&self) -> usize {
        self.videos
            .iter()
            .map(|v| v.manifest.label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Feature dimension of the first video's RGB stream.
    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.videos[0].features(Modality::Rgb)?.dim())
    }

    /// Borrow a contiguous index range as a sub-dataset view.
    pub fn slice(&self, range: std::ops::Range<usize>) -> &[VideoRecord] {
        &self.videos[range]
    }
}
