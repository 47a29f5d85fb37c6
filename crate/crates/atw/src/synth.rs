//! Synthetic dataset generator.
//!
//! Each video gets one key segment whose feature rows carry a class-dependent
//! mean; every other segment is zero-mean noise. Class means are orthogonal
//! (scaled unit basis vectors), so task difficulty is governed by the noise
//! standard deviation alone. The key segment index is recorded both in the
//! manifest and in a ground-truth table for attention-concentration checks.
//!
//! Noise rows are not plain gaussians: along the class axes they mix a
//! narrow gaussian with rare balanced distractor spikes, the way background
//! segments of real video carry transient content resembling other actions.
//! A distractor event writes `+b` and `-b` onto a pair of class axes of one
//! noise row and the mirrored signs onto a second noise row, so it cancels
//! exactly both across the video (averaging is immune) and along the class
//! axes of each row, while an elementwise max still picks up the positive
//! halves. Per entry the noise stays zero-mean with standard deviation
//! exactly `noise_sigma`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{write_features, FeatureSet};
use crate::math::Matrix;
use crate::pipeline::{write_manifest, FeaturePaths, Modality, VideoManifest};

/// How the key segment is placed within each video.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeySegmentPolicy {
    /// Uniformly random segment per video (default).
    #[default]
    Uniform,
    /// Same segment index for every video; handy for debugging.
    Fixed(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_segments: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub noise_sigma: f64,
    #[serde(default)]
    pub key_segment_policy: KeySegmentPolicy,
    pub seed: u64,
    /// Magnitude of the class mean vectors.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
}

fn default_mean_scale() -> f64 {
    3.0
}

/// Key-segment noise, in units of `noise_sigma`.
const KEY_NOISE_STD: f64 = 0.5;
/// Gaussian part of class-axis noise on non-key rows, in units of
/// `noise_sigma`; distractor spikes supply the remaining variance.
const CLASS_NOISE_STD: f64 = 0.15;
/// Distractor spike magnitude, in units of `noise_sigma`.
const DISTRACTOR_SCALE: f64 = 3.4;

/// Per-video distractor layout: gaussian std for class axes of noise rows
/// plus the expected number of balanced spike events.
struct NoisePlan {
    class_gauss_std: f64,
    event_prob: f64,
}

impl NoisePlan {
    fn new(num_segments: usize, num_classes: usize) -> Self {
        let noise_rows = num_segments.saturating_sub(1);
        if noise_rows < 2 || num_classes < 2 {
            // no room for a balanced event; class axes carry plain full noise
            return NoisePlan {
                class_gauss_std: 1.0,
                event_prob: 0.0,
            };
        }
        let spike_budget = 1.0 - CLASS_NOISE_STD * CLASS_NOISE_STD;
        let b2 = DISTRACTOR_SCALE * DISTRACTOR_SCALE;
        // P(entry spiked) = q * (2/noise_rows) * (2/num_classes)
        let event_prob =
            (spike_budget * noise_rows as f64 * num_classes as f64 / (4.0 * b2)).min(1.0);
        let spike_var = event_prob * (2.0 / noise_rows as f64) * (2.0 / num_classes as f64) * b2;
        NoisePlan {
            class_gauss_std: (1.0 - spike_var).max(0.0).sqrt(),
            event_prob,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(Error::invalid("num_videos must be positive"));
        }
        if self.num_segments == 0 {
            return Err(Error::invalid("num_segments must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.dim < self.num_classes {
            return Err(Error::invalid(
                "feature dim must be at least the class count for orthogonal means",
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(
                "noise_sigma must be finite and non-negative",
            ));
        }
        if let KeySegmentPolicy::Fixed(k) = self.key_segment_policy {
            if k >= self.num_segments {
                return Err(Error::invalid(format!(
                    "fixed key segment {k} out of range for {} segments",
                    self.num_segments
                )));
            }
        }
        Ok(())
    }

    /// Mean vector for one class: `mean_scale` on basis axis `label`.
    pub fn class_mean(&self, label: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        mean[label] = self.mean_scale;
        mean
    }
}

/// One generated video before it is written to disk.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub manifest: VideoManifest,
    pub features: Vec<FeatureSet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub num_videos: usize,
    pub num_segments: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub manifest_files: usize,
    pub feature_files: usize,
}

fn video_id(index: usize) -> String {
    format!("v{index:05}")
}

/// Generate all videos in memory. Fully deterministic: one rng stream drives
/// label, frame count, key segment, and noise draws in a fixed order. Noise is
/// quantized to f32 at generation time so in-memory values match the files.
pub fn generate_videos(config: &SynthConfig) -> Result<Vec<SynthVideo>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let plan = NoisePlan::new(config.num_segments, config.num_classes);
    let sigma = config.noise_sigma;
    let mut videos = Vec::with_capacity(config.num_videos);

    for index in 0..config.num_videos {
        let label = rng.gen_range(0..config.num_classes);
        let min_frames = config.num_segments.max(8);
        let num_frames = rng.gen_range(min_frames * 5..min_frames * 40);
        let key_segment = match config.key_segment_policy {
            KeySegmentPolicy::Uniform => rng.gen_range(0..config.num_segments),
            KeySegmentPolicy::Fixed(k) => k,
        };
        let mean = config.class_mean(label);

        let id = video_id(index);
        let mut feature_sets = Vec::with_capacity(Modality::ALL.len());
        for modality in Modality::ALL {
            let mut data = vec![0.0f64; config.num_segments * config.dim];
            for segment in 0..config.num_segments {
                for d in 0..config.dim {
                    let std = if segment == key_segment {
                        KEY_NOISE_STD
                    } else if d < config.num_classes {
                        plan.class_gauss_std
                    } else {
                        1.0
                    };
                    let base = if segment == key_segment { mean[d] } else { 0.0 };
                    data[segment * config.dim + d] = base + normal.sample(&mut rng) * std * sigma;
                }
            }
            if rng.gen::<f64>() < plan.event_prob {
                // balanced distractor: mirrored +-spikes on two noise rows
                // and two class axes; sums to zero along rows and class axes
                let noise_rows: Vec<usize> = (0..config.num_segments)
                    .filter(|s| *s != key_segment)
                    .collect();
                let first = rng.gen_range(0..noise_rows.len());
                let second = {
                    let pick = rng.gen_range(0..noise_rows.len() - 1);
                    if pick >= first {
                        pick + 1
                    } else {
                        pick
                    }
                };
                let axis_a = rng.gen_range(0..config.num_classes);
                let axis_b = {
                    let pick = rng.gen_range(0..config.num_classes - 1);
                    if pick >= axis_a {
                        pick + 1
                    } else {
                        pick
                    }
                };
                let spike = DISTRACTOR_SCALE * sigma;
                let row_a = noise_rows[first] * config.dim;
                let row_b = noise_rows[second] * config.dim;
                data[row_a + axis_a] += spike;
                data[row_a + axis_b] -= spike;
                data[row_b + axis_a] -= spike;
                data[row_b + axis_b] += spike;
            }
            for v in &mut data {
                *v = *v as f32 as f64;
            }
            feature_sets.push(FeatureSet::new(
                modality,
                Matrix::from_vec(config.num_segments, config.dim, data)?,
            ));
        }

        let feature_paths = FeaturePaths {
            rgb: format!("features/{id}_rgb.atwf"),
            flow: format!("features/{id}_flow.atwf"),
            warped_flow: format!("features/{id}_warped_flow.atwf"),
        };
        videos.push(SynthVideo {
            manifest: VideoManifest {
                video_id: id,
                num_frames,
                label,
                num_segments: config.num_segments,
                feature_paths,
                key_segment: Some(key_segment),
            },
            features: feature_sets,
        });
    }
    Ok(videos)
}

/// Generate and write a dataset: `manifests/*.json`, `features/*.atwf`, and
/// a `key_segments.csv` ground-truth table under `out_dir`.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    let videos = generate_videos(config)?;
    let manifest_dir = out_dir.join("manifests");
    let feature_dir = out_dir.join("features");
    fs::create_dir_all(&manifest_dir).map_err(|e| Error::io(&manifest_dir, e))?;
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;

    let mut key_table = String::from("video_id,key_segment\n");
    let mut feature_files = 0;
    for video in &videos {
        let manifest_path = manifest_dir.join(format!("{}.json", video.manifest.video_id));
        write_manifest(&manifest_path, &video.manifest)?;
        for set in &video.features {
            let rel = video.manifest.feature_paths.get(set.modality);
            write_features(&out_dir.join(rel), set)?;
            feature_files += 1;
        }
        key_table.push_str(&format!(
            "{},{}\n",
            video.manifest.video_id,
            video
                .manifest
                .key_segment
                .expect("synthetic videos always have one"),
        ));
    }
    let table_path: PathBuf = out_dir.join("key_segments.csv");
    fs::write(&table_path, key_table).map_err(|e| Error::io(&table_path, e))?;

    Ok(SynthSummary {
        num_videos: config.num_videos,
        num_segments: config.num_segments,
        dim: config.dim,
        num_classes: config.num_classes,
        manifest_files: videos.len(),
        feature_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Dataset;

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_videos: 20,
            num_segments: 4,
            dim: 8,
            num_classes: 4,
            noise_sigma: 1.0,
            key_segment_policy: KeySegmentPolicy::Uniform,
            seed: 7,
            mean_scale: 3.0,
        }
    }

    #[test]
    fn validates_config() {
        let mut c = small_config();
        c.num_classes = 1;
        assert!(generate_videos(&c).is_err());
        let mut c = small_config();
        c.dim = 2;
        assert!(generate_videos(&c).is_err());
        let mut c = small_config();
        c.num_segments = 0;
        assert!(generate_videos(&c).is_err());
        let mut c = small_config();
        c.key_segment_policy = KeySegmentPolicy::Fixed(4);
        assert!(generate_videos(&c).is_err());
    }

    #[test]
    fn zero_noise_single_segment_is_pure_mean() {
        let config = SynthConfig {
            num_videos: 10,
            num_segments: 1,
            dim: 6,
            num_classes: 3,
            noise_sigma: 0.0,
            key_segment_policy: KeySegmentPolicy::Uniform,
            seed: 5,
            mean_scale: 3.0,
        };
        for video in generate_videos(&config).unwrap() {
            let mean = config.class_mean(video.manifest.label);
            for set in &video.features {
                assert_eq!(set.row(0), &mean[..]);
            }
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let config = small_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        synth_dataset(&config, dir_a.path()).unwrap();
        synth_dataset(&config, dir_b.path()).unwrap();
        for sub in ["manifests", "features"] {
            let mut names: Vec<String> = std::fs::read_dir(dir_a.path().join(sub))
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                let a = std::fs::read(dir_a.path().join(sub).join(&name)).unwrap();
                let b = std::fs::read(dir_b.path().join(sub).join(&name)).unwrap();
                assert_eq!(a, b, "{sub}/{name} differs between identical runs");
            }
        }
        let a = std::fs::read(dir_a.path().join("key_segments.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("key_segments.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_loads_back_and_counts_match() {
        let config = small_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = synth_dataset(&config, dir.path()).unwrap();
        assert_eq!(summary.manifest_files, 20);
        assert_eq!(summary.feature_files, 60);
        let dataset = Dataset::load(dir.path()).unwrap();
        assert_eq!(dataset.videos.len(), 20);
        assert_eq!(dataset.num_classes(), 4);
        assert_eq!(dataset.feature_dim().unwrap(), 8);
    }

    #[test]
    fn noise_rows_have_unit_sigma_budget() {
        // the gaussian part plus the spike events must add up to std
        // noise_sigma on every axis of the non-key rows; the spike term makes
        // the variance estimator heavy-tailed, so this needs a large sample
        let config = SynthConfig {
            num_videos: 4000,
            num_segments: 4,
            dim: 8,
            num_classes: 4,
            noise_sigma: 1.0,
            key_segment_policy: KeySegmentPolicy::Uniform,
            seed: 19,
            mean_scale: 3.0,
        };
        let videos = generate_videos(&config).unwrap();
        let mut sum_sq = vec![0.0f64; config.dim];
        let mut sum = vec![0.0f64; config.dim];
        let mut count = 0usize;
        for video in &videos {
            let key = video.manifest.key_segment.unwrap();
            for set in &video.features {
                for row in 0..config.num_segments {
                    if row == key {
                        continue;
                    }
                    for (d, v) in set.row(row).iter().enumerate() {
                        sum[d] += v;
                        sum_sq[d] += v * v;
                    }
                    count += 1;
                }
            }
        }
        for d in 0..config.dim {
            let mean = sum[d] / count as f64;
            let var = sum_sq[d] / count as f64 - mean * mean;
            assert!(mean.abs() < 0.05, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 0.08, "dim {d} variance {var}");
        }
    }

    #[test]
    fn key_segment_rows_converge_to_class_mean() {
        let config = SynthConfig {
            num_videos: 600,
            num_segments: 4,
            dim: 6,
            num_classes: 3,
            noise_sigma: 1.0,
            key_segment_policy: KeySegmentPolicy::Uniform,
            seed: 11,
            mean_scale: 3.0,
        };
        let videos = generate_videos(&config).unwrap();
        for class in 0..config.num_classes {
            let mean = config.class_mean(class);
            let mut sum = vec![0.0; config.dim];
            let mut count = 0usize;
            for video in videos.iter().filter(|v| v.manifest.label == class) {
                let key = video.manifest.key_segment.unwrap();
                for set in &video.features {
                    for (s, v) in sum.iter_mut().zip(set.row(key)) {
                        *s += v;
                    }
                    count += 1;
                }
            }
            assert!(count > 100);
            let bound = 3.0 * config.noise_sigma / (count as f64).sqrt();
            for (d, s) in sum.iter().enumerate() {
                let empirical = s / count as f64;
                assert!(
                    (empirical - mean[d]).abs() <= bound,
                    "class {class} dim {d}: {empirical} vs {} (bound {bound})",
                    mean[d]
                );
            }
        }
    }
}
