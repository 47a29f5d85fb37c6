//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]`/`[FAIL]` line (visible with `--nocapture`).
//!
//! Run with:
//!   cargo test -p atw --test acceptance -- --nocapture

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use atw::attention::{
    consensus, init_params, AttentionParams, Classifier, ConsensusKind, InitStrategy, Placement,
    StreamModel,
};
use atw::features::FeatureSet;
use atw::fusion::{evaluate, fuse_streams, video_attention_weights, FusionConfig};
use atw::gradcheck::{run_gradcheck, GradCheckConfig};
use atw::math::{softmax, Activation, Matrix};
use atw::pipeline::{partition_video, sample_snippet, Dataset, Modality, VideoRecord};
use atw::synth::{generate_videos, synth_dataset, KeySegmentPolicy, SynthConfig};
use atw::trainer::{lr_schedule, train_stream_videos, write_trace, Stream, TrainConfig};

struct Criterion {
    name: &'static str,
    start: Instant,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Criterion {
            name,
            start: Instant::now(),
        }
    }

    fn check(self, ok: bool, detail: String) {
        let elapsed = self.start.elapsed();
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("[{verdict}] {}: {detail} ({elapsed:.2?})", self.name);
        assert!(ok, "{}: {detail}", self.name);
    }
}

fn single_spatial() -> FusionConfig {
    FusionConfig {
        weights: BTreeMap::from([(Stream::Spatial, 1.0)]),
        test_snippet_count: 80,
        normalize: true,
        fuse_logits: false,
    }
}

// ---------------------------------------------------------------------------
// standard synthetic benchmark, shared by criteria 5, 6, and 7
// ---------------------------------------------------------------------------

struct Benchmark {
    videos: Vec<VideoRecord>,
    attention_model: StreamModel,
    accuracy: BTreeMap<&'static str, f64>,
    train_eval_time: Duration,
}

fn benchmark_config() -> SynthConfig {
    SynthConfig {
        num_videos: 2500,
        num_segments: 4,
        dim: 16,
        num_classes: 4,
        noise_sigma: 1.0,
        key_segment_policy: KeySegmentPolicy::Uniform,
        seed: 7,
        mean_scale: 3.0,
    }
}

fn train_config(consensus: ConsensusKind, num_segments: Option<usize>) -> TrainConfig {
    TrainConfig {
        stream: Stream::Spatial,
        batch_size: 128,
        base_lr: 0.1,
        momentum: 0.9,
        max_iterations: 2000,
        consensus,
        num_segments,
        seed: 7,
    }
}

fn fresh_model() -> StreamModel {
    StreamModel::new(
        init_params(InitStrategy::Gaussian, 16, Activation::Relu, 7).unwrap(),
        Classifier::zeros(4, 16),
        Placement::Feature,
    )
    .unwrap()
}

fn benchmark() -> &'static Benchmark {
    static BENCHMARK: OnceLock<Benchmark> = OnceLock::new();
    BENCHMARK.get_or_init(|| {
        let videos: Vec<VideoRecord> = generate_videos(&benchmark_config())
            .unwrap()
            .into_iter()
            .map(|v| VideoRecord {
                manifest: v.manifest,
                features: v.features.into_iter().map(|f| (f.modality, f)).collect(),
            })
            .collect();
        let start = Instant::now();
        let (train, test) = videos.split_at(2000);
        let (attention_model, _) = train_stream_videos(
            &train_config(ConsensusKind::Attention, None),
            train,
            fresh_model(),
        )
        .unwrap();
        // Table-1 style comparison: the per-stream consensus function is
        // switched at evaluation time over the same trained stream.
        let models = BTreeMap::from([(Stream::Spatial, attention_model.clone())]);
        let config = single_spatial();
        let mut accuracy = BTreeMap::new();
        for (name, kind) in [
            ("attention", ConsensusKind::Attention),
            ("average", ConsensusKind::Average),
            ("max", ConsensusKind::Max),
        ] {
            let report = evaluate(&models, test, &config, kind, 7).unwrap();
            accuracy.insert(name, report.accuracy);
        }
        let train_eval_time = start.elapsed();
        Benchmark {
            videos,
            attention_model,
            accuracy,
            train_eval_time,
        }
    })
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_oracle() {
    let c = Criterion::new("criterion 1: gradient oracle");
    let start = Instant::now();
    let report = run_gradcheck(&GradCheckConfig {
        trials: 102,
        seed: 2024,
        tolerance: 1e-5,
        eps: 1e-6,
    })
    .unwrap();
    let elapsed = start.elapsed();
    c.check(
        report.passed() && report.max_rel_error < 1e-5 && elapsed < Duration::from_secs(30),
        format!(
            "{} checks over {} instances, max rel error {:.3e}, {} failures, {elapsed:.2?} (< 30s)",
            report.checks,
            report.trials,
            report.max_rel_error,
            report.failures.len()
        ),
    );
}

#[test]
fn criterion_02_degradation_to_average() {
    let c = Criterion::new("criterion 2: degradation equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let dim = rng.gen_range(2..=16);
        let classes = rng.gen_range(2..=6);
        let features = FeatureSet::new(
            Modality::Rgb,
            Matrix::from_vec(
                n,
                dim,
                (0..n * dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            )
            .unwrap(),
        );
        let model = StreamModel::new(
            AttentionParams {
                weight: vec![0.0; dim],
                bias: 0.0,
                activation: Activation::Relu,
            },
            Classifier {
                weight: Matrix::from_vec(
                    classes,
                    dim,
                    (0..classes * dim)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap(),
                bias: (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            },
            Placement::Feature,
        )
        .unwrap();

        let attention_probs = consensus(ConsensusKind::Attention, &model, &features).unwrap();

        // independent route: arithmetic row mean, then classify
        let mean: Vec<f64> = (0..dim)
            .map(|d| (0..n).map(|i| features.row(i)[d]).sum::<f64>() / n as f64)
            .collect();
        let average_probs = softmax(&model.classifier.logits(&mean).unwrap()).unwrap();

        for (a, b) in attention_probs.iter().zip(&average_probs) {
            worst = worst.max((a - b).abs());
        }
    }
    c.check(
        worst <= 1e-12,
        format!("max |attention - feature average| = {worst:.3e} over 1000 inputs (tol 1e-12)"),
    );
}

#[test]
fn criterion_03_softmax_suite() {
    let c = Criterion::new("criterion 3: softmax suite");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut all_positive = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-40.0..40.0)).collect();
        let weights = softmax(&scores).unwrap();
        all_positive &= weights.iter().all(|w| *w > 0.0);
        worst_sum = worst_sum.max((weights.iter().sum::<f64>() - 1.0).abs());

        let shift = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let moved = softmax(&shifted).unwrap();
        for (a, b) in weights.iter().zip(&moved) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    c.check(
        all_positive && worst_sum <= 1e-12 && worst_shift <= 1e-9,
        format!(
            "1000 vectors: positive {all_positive}, |sum-1| <= {worst_sum:.3e} (tol 1e-12), \
             shift drift <= {worst_shift:.3e} (tol 1e-9)"
        ),
    );
}

#[test]
fn criterion_04_partition_and_sampling() {
    let c = Criterion::new("criterion 4: partition/sampling suite");

    // exhaustive partition properties
    let mut partitions = 0usize;
    for num_frames in 1..=1000usize {
        for n in 1..=8.min(num_frames) {
            let segs = partition_video(num_frames, n).unwrap();
            let mut cursor = 0;
            for seg in &segs {
                assert_eq!(
                    seg.start_frame, cursor,
                    "gap or overlap at {num_frames}/{n}"
                );
                cursor = seg.end_frame;
            }
            assert_eq!(cursor, num_frames);
            let min = segs.iter().map(|s| s.len()).min().unwrap();
            let max = segs.iter().map(|s| s.len()).max().unwrap();
            assert!(max - min <= 1, "size spread > 1 at {num_frames}/{n}");
            partitions += 1;
        }
    }

    // 10,000 sampled snippets all in range
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let num_frames = rng.gen_range(1..=1000);
        let n = rng.gen_range(1..=8.min(num_frames));
        let segs = partition_video(num_frames, n).unwrap();
        let seg = segs[rng.gen_range(0..segs.len())];
        let snip = sample_snippet(&seg, num_frames, &mut rng);
        assert!(snip.rgb_frame >= seg.start_frame && snip.rgb_frame < seg.end_frame);
        assert!(snip.flow_start + snip.flow_stack_len <= num_frames);
        assert!(snip.warped_flow_start + snip.flow_stack_len <= num_frames);
    }

    // bitwise seeded determinism
    let mut deterministic = true;
    for seed in 0..50u64 {
        let seg = partition_video(977, 5).unwrap()[3];
        let a = sample_snippet(&seg, 977, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = sample_snippet(&seg, 977, &mut ChaCha8Rng::seed_from_u64(seed));
        deterministic &= a == b;
    }

    c.check(
        deterministic,
        format!(
            "{partitions} exhaustive partitions, 10000 snippets in range, seeded draws bitwise equal"
        ),
    );
}

#[test]
fn criterion_05_consensus_ordering() {
    let c = Criterion::new("criterion 5: consensus ordering");
    let bench = benchmark();
    let att = bench.accuracy["attention"];
    let avg = bench.accuracy["average"];
    let max = bench.accuracy["max"];
    let ok = att >= avg
        && avg >= max
        && att - avg >= 0.01
        && bench.train_eval_time < Duration::from_secs(300);
    c.check(
        ok,
        format!(
            "attention {att:.4} >= average {avg:.4} >= max {max:.4}, margin {:.2}pp (>= 1pp), \
             train+eval {:.2?} (< 5 min)",
            (att - avg) * 100.0,
            bench.train_eval_time
        ),
    );
}

#[test]
fn criterion_06_attention_concentration() {
    let c = Criterion::new("criterion 6: attention concentration");
    let bench = benchmark();
    let test = &bench.videos[2000..];
    let mut key_is_max = 0usize;
    let mut key_weight_sum = 0.0;
    for video in test {
        let features = video.features(Modality::Rgb).unwrap();
        let weights = video_attention_weights(&bench.attention_model, features).unwrap();
        let key = video.manifest.key_segment.unwrap();
        let argmax = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == key {
            key_is_max += 1;
        }
        key_weight_sum += weights[key];
    }
    let frac = key_is_max as f64 / test.len() as f64;
    let mean_weight = key_weight_sum / test.len() as f64;
    let needed = 1.5 / 4.0;
    c.check(
        frac >= 0.60 && mean_weight >= needed,
        format!(
            "key segment is argmax in {:.1}% of test videos (>= 60%), mean key weight {mean_weight:.4} (>= {needed})",
            frac * 100.0
        ),
    );
}

#[test]
fn criterion_07_segment_count_trend() {
    let c = Criterion::new("criterion 7: segment-count trend");
    let bench = benchmark();
    let (train, test) = bench.videos.split_at(2000);
    // same data, same budget; only the per-video snippet count differs
    let (model_n1, _) = train_stream_videos(
        &train_config(ConsensusKind::Attention, Some(1)),
        train,
        fresh_model(),
    )
    .unwrap();
    let models = BTreeMap::from([(Stream::Spatial, model_n1)]);
    let acc_n1 = evaluate(
        &models,
        test,
        &single_spatial(),
        ConsensusKind::Attention,
        7,
    )
    .unwrap()
    .accuracy;
    let acc_n4 = bench.accuracy["attention"];
    c.check(
        acc_n4 - acc_n1 >= 0.02,
        format!(
            "N=4 accuracy {acc_n4:.4} vs N=1 accuracy {acc_n1:.4}: gap {:.2}pp (>= 2pp)",
            (acc_n4 - acc_n1) * 100.0
        ),
    );
}

#[test]
fn criterion_08_lr_schedule_exactness() {
    let c = Criterion::new("criterion 8: lr schedule exactness");
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let spatial = [
        (0u64, 0.001),
        (1999, 0.001),
        (2000, 0.0001),
        (4000, 0.00001),
    ];
    let flow = [(11_999u64, 0.005), (12_000, 0.0005), (18_000, 0.00005)];
    let mut worst: f64 = 0.0;
    for (it, expect) in spatial {
        worst = worst.max(rel(lr_schedule(Stream::Spatial, 0.001, it), expect));
    }
    for (it, expect) in flow {
        worst = worst.max(rel(lr_schedule(Stream::Flow, 0.005, it), expect));
        worst = worst.max(rel(lr_schedule(Stream::WarpedFlow, 0.005, it), expect));
    }
    c.check(
        worst <= 1e-12,
        format!("all pinned schedule points within rel {worst:.3e} (tol 1e-12)"),
    );
}

#[test]
fn criterion_09_fusion_exactness() {
    let c = Criterion::new("criterion 9: fusion exactness");

    let config = FusionConfig {
        weights: BTreeMap::from([
            (Stream::Spatial, 1.0),
            (Stream::Flow, 1.0),
            (Stream::WarpedFlow, 0.5),
        ]),
        test_snippet_count: 80,
        normalize: true,
        fuse_logits: false,
    };
    let scores = BTreeMap::from([
        (Stream::Spatial, vec![0.8, 0.2]),
        (Stream::Flow, vec![0.6, 0.4]),
        (Stream::WarpedFlow, vec![0.5, 0.5]),
    ]);
    let fused = fuse_streams(&scores, &config).unwrap();
    let hand_ok = (fused[0] - 0.66).abs() <= 1e-12 && (fused[1] - 0.34).abs() <= 1e-12;

    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rescale_ok = true;
    for _ in 0..1000 {
        let classes = rng.gen_range(2..8);
        let rand_scores: BTreeMap<Stream, Vec<f64>> = Stream::ALL
            .into_iter()
            .map(|s| (s, (0..classes).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let base_weights: BTreeMap<Stream, f64> = Stream::ALL
            .into_iter()
            .map(|s| (s, rng.gen_range(0.05..3.0)))
            .collect();
        let scale = rng.gen_range(0.01..100.0);
        let base = fuse_streams(
            &rand_scores,
            &FusionConfig {
                weights: base_weights.clone(),
                normalize: rng.gen_bool(0.5),
                ..config.clone()
            },
        )
        .unwrap();
        let scaled = fuse_streams(
            &rand_scores,
            &FusionConfig {
                weights: base_weights.iter().map(|(s, w)| (*s, w * scale)).collect(),
                normalize: rng.gen_bool(0.5),
                ..config.clone()
            },
        )
        .unwrap();
        rescale_ok &= argmax(&base) == argmax(&scaled);
    }

    c.check(
        hand_ok && rescale_ok,
        format!(
            "hand case fused to [{:.4}, {:.4}] (tol 1e-12); argmax stable under rescale in 1000 cases",
            fused[0], fused[1]
        ),
    );
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let c = Criterion::new("criterion 10: end-to-end determinism");

    fn full_run(root: &Path) {
        let synth = SynthConfig {
            num_videos: 300,
            num_segments: 4,
            dim: 12,
            num_classes: 3,
            noise_sigma: 1.0,
            key_segment_policy: KeySegmentPolicy::Uniform,
            seed: 11,
            mean_scale: 3.0,
        };
        let data_dir = root.join("data");
        synth_dataset(&synth, &data_dir).unwrap();
        let dataset = Dataset::load(&data_dir).unwrap();
        let (train, test) = dataset.videos.split_at(240);

        let out = root.join("out");
        std::fs::create_dir_all(&out).unwrap();
        let mut models = BTreeMap::new();
        for stream in Stream::ALL {
            let config = TrainConfig {
                stream,
                batch_size: 32,
                base_lr: 0.1,
                momentum: 0.9,
                max_iterations: 400,
                consensus: ConsensusKind::Attention,
                num_segments: None,
                seed: 11,
            };
            let model = StreamModel::new(
                init_params(InitStrategy::Gaussian, 12, Activation::Relu, 11).unwrap(),
                Classifier::zeros(3, 12),
                Placement::Feature,
            )
            .unwrap();
            let (trained, trace) = train_stream_videos(&config, train, model).unwrap();
            trained
                .save(&out.join(format!("{}.json", stream.name())))
                .unwrap();
            write_trace(&out.join(format!("{}_loss.csv", stream.name())), &trace).unwrap();
            models.insert(stream, trained);
        }

        let fusion = FusionConfig::default();
        let report = evaluate(&models, test, &fusion, ConsensusKind::Attention, 11).unwrap();
        report.write_json(&out.join("report.json")).unwrap();
        report.write_csv(&out.join("report.csv")).unwrap();
    }

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    full_run(dir_a.path());
    full_run(dir_b.path());

    let mut compared = 0usize;
    let mut identical = true;
    for rel in [
        "out/spatial.json",
        "out/flow.json",
        "out/warped_flow.json",
        "out/spatial_loss.csv",
        "out/flow_loss.csv",
        "out/warped_flow_loss.csv",
        "out/report.json",
        "out/report.csv",
        "data/key_segments.csv",
    ] {
        let a = std::fs::read(dir_a.path().join(rel)).unwrap();
        let b = std::fs::read(dir_b.path().join(rel)).unwrap();
        identical &= a == b;
        compared += 1;
    }
    // feature files and manifests too
    for sub in ["data/features", "data/manifests"] {
        let mut names: Vec<_> = std::fs::read_dir(dir_a.path().join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let a = std::fs::read(dir_a.path().join(sub).join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(sub).join(&name)).unwrap();
            identical &= a == b;
            compared += 1;
        }
    }
    c.check(
        identical && compared > 1200,
        format!("two full synth->train->eval runs byte-identical across {compared} files"),
    );
}
