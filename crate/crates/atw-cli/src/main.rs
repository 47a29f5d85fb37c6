//! Single-binary pipeline driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! The `ATW_SEED` environment variable is the global seed fallback when
//! neither a flag nor the config file provides one.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use atw::attention::{init_params, Classifier, ConsensusKind, StreamModel};
use atw::error::Error;
use atw::fusion::{attention_csv, evaluate, export_attention};
use atw::gradcheck::{run_gradcheck, GradCheckConfig};
use atw::pipeline::Dataset;
use atw::synth::{synth_dataset, KeySegmentPolicy, SynthConfig};
use atw::trainer::{train_stream_videos, write_trace, Stream};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "atw",
    version,
    about = "Attention-weighted temporal consensus pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifests, feature files, key-segment table.
    Synth(SynthArgs),
    /// Train one model per stream; writes model JSON and a loss CSV each.
    Train(TrainArgs),
    /// Evaluate trained stream models with weighted fusion; writes reports.
    Eval(EvalArgs),
    /// Compare every analytic gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Export per-snippet attention weights for one video as CSV.
    AttnDump(AttnDumpArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    videos: usize,
    #[arg(long)]
    segments: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Magnitude of the class mean vectors.
    #[arg(long, default_value_t = 3.0)]
    mean_scale: f64,
    /// Key segment placement: "uniform" or "fixed:<index>".
    #[arg(long, default_value = "uniform")]
    key_policy: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's consensus function.
    #[arg(long)]
    consensus: Option<String>,
    /// Override every stream's iteration budget.
    #[arg(long)]
    max_iterations: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the trained model files.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Consensus to evaluate; defaults to the config's choice.
    #[arg(long)]
    consensus: Option<String>,
    /// Where to write report.json and report.csv; defaults to output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
}

#[derive(Args)]
struct AttnDumpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    video: String,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which stream's features to weigh.
    #[arg(long, default_value = "spatial")]
    stream: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn env_seed() -> Option<u64> {
    std::env::var("ATW_SEED").ok().and_then(|s| s.parse().ok())
}

/// Seed priority: flag, then config, then ATW_SEED, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config).or_else(env_seed).unwrap_or(0)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::BadVersion { .. }
        | Error::ShapeMismatch { .. }
        | Error::Json { .. }
        | Error::MissingModality(_)
        | Error::MissingStream(_)
        | Error::EmptyDataset
        | Error::DimMismatch { .. } => 2,
        Error::Diverged { .. } | Error::OracleFailure(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints its own help/usage text; help and version requests
            // are successes, everything else is a usage error
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::AttnDump(args) => cmd_attn_dump(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn parse_key_policy(text: &str) -> Result<KeySegmentPolicy, Error> {
    if text == "uniform" {
        return Ok(KeySegmentPolicy::Uniform);
    }
    if let Some(index) = text.strip_prefix("fixed:") {
        let index: usize = index
            .parse()
            .map_err(|_| Error::invalid(format!("bad key policy {text:?}")))?;
        return Ok(KeySegmentPolicy::Fixed(index));
    }
    Err(Error::invalid(format!(
        "key policy must be \"uniform\" or \"fixed:<index>\", got {text:?}"
    )))
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode, Error> {
    let config = SynthConfig {
        num_videos: args.videos,
        num_segments: args.segments,
        dim: args.dim,
        num_classes: args.classes,
        noise_sigma: args.noise,
        key_segment_policy: parse_key_policy(&args.key_policy)?,
        seed: resolve_seed(args.seed, None),
        mean_scale: args.mean_scale,
    };
    let summary = synth_dataset(&config, &args.out)?;
    println!(
        "wrote {} manifests and {} feature files ({} segments x {} dims, {} classes) to {}",
        summary.manifest_files,
        summary.feature_files,
        summary.num_segments,
        summary.dim,
        summary.num_classes,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn split_dataset(config: &RunConfig, dataset: &Dataset) -> Result<(usize, usize), Error> {
    let total = dataset.videos.len();
    if config.train_count >= total {
        return Err(Error::Config(format!(
            "train_count {} needs at least one held-out video of {total}",
            config.train_count
        )));
    }
    let test_end = match config.test_count {
        Some(count) => {
            let end = config.train_count + count;
            if end > total {
                return Err(Error::Config(format!(
                    "train_count + test_count = {end} exceeds {total} videos"
                )));
            }
            end
        }
        None => total,
    };
    Ok((config.train_count, test_end))
}

fn fresh_model(config: &RunConfig, dataset: &Dataset, seed: u64) -> Result<StreamModel, Error> {
    let dim = dataset.feature_dim()?;
    let classes = dataset.num_classes();
    let segments = dataset.videos[0].manifest.num_segments;
    let attention = init_params(config.init.resolve(segments), dim, config.activation, seed)?;
    StreamModel::new(attention, Classifier::zeros(classes, dim), config.placement)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(kind) = &args.consensus {
        config.consensus = ConsensusKind::from_str(kind)?;
    }
    if let Some(iterations) = args.max_iterations {
        for stream in Stream::ALL {
            match stream {
                Stream::Spatial => config.train.spatial.max_iterations = iterations,
                Stream::Flow => config.train.flow.max_iterations = iterations,
                Stream::WarpedFlow => config.train.warped_flow.max_iterations = iterations,
            }
        }
    }
    let seed = resolve_seed(args.seed, config.seed);

    let dataset = Dataset::load(&config.dataset_dir)?;
    let (train_end, _) = split_dataset(&config, &dataset)?;
    let train = &dataset.videos[..train_end];

    let model_dir = config.output_dir.join("models");
    let trace_dir = config.output_dir.join("traces");
    fs::create_dir_all(&model_dir).map_err(|e| Error::io(&model_dir, e))?;
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;

    for stream in Stream::ALL {
        let train_config = config.train_config(stream, seed);
        let model = fresh_model(&config, &dataset, seed)?;
        let (trained, trace) = train_stream_videos(&train_config, train, model)?;
        let model_path = model_dir.join(format!("{}.json", stream.name()));
        trained.save(&model_path)?;
        write_trace(
            &trace_dir.join(format!("{}_loss.csv", stream.name())),
            &trace,
        )?;
        let last = trace.last().map(|row| row.batch_loss).unwrap_or(f64::NAN);
        println!(
            "trained {} stream on {} videos: final batch loss {last:.6}, model at {}",
            stream.name(),
            train.len(),
            model_path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let config = RunConfig::load(&args.config)?;
    let seed = resolve_seed(args.seed, config.seed);
    let kind = match &args.consensus {
        Some(text) => ConsensusKind::from_str(text)?,
        None => config.consensus,
    };
    let dataset = Dataset::load(&config.dataset_dir)?;
    let (train_end, test_end) = split_dataset(&config, &dataset)?;
    let test = &dataset.videos[train_end..test_end];

    let mut models = BTreeMap::new();
    for stream in config.fusion.active_streams() {
        let path = args.models.join(format!("{}.json", stream.name()));
        models.insert(stream, StreamModel::load(&path)?);
    }
    let report = evaluate(&models, test, &config.fusion, kind, seed)?;

    let out_dir = args.out.unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    report.write_json(&out_dir.join("report.json"))?;
    report.write_csv(&out_dir.join("report.csv"))?;
    println!(
        "evaluated {} videos with {:?} consensus: accuracy {:.4} (reports in {})",
        report.num_videos,
        kind,
        report.accuracy,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    if args.trials == 0 {
        println!("warning: 0 trials requested; vacuously passing");
        println!("max relative error: n/a (0 checks)");
        return Ok(ExitCode::SUCCESS);
    }
    let report = run_gradcheck(&GradCheckConfig {
        trials: args.trials,
        seed: resolve_seed(args.seed, None),
        tolerance: args.tolerance,
        eps: args.eps,
    })?;
    println!(
        "ran {} gradient checks over {} random instances",
        report.checks, report.trials
    );
    println!("max relative error: {:.6e}", report.max_rel_error);
    if report.passed() {
        println!("all gradients within tolerance {:.1e}", args.tolerance);
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &report.failures {
            eprintln!(
                "FAIL trial {} ({}): rel error {:.6e}",
                failure.trial, failure.kind, failure.rel_error
            );
        }
        eprintln!(
            "{} of {} checks exceeded tolerance {:.1e}",
            report.failures.len(),
            report.checks,
            args.tolerance
        );
        Ok(ExitCode::from(3))
    }
}

fn cmd_attn_dump(args: AttnDumpArgs) -> Result<ExitCode, Error> {
    let stream = Stream::from_str(&args.stream)?;
    let model = StreamModel::load(&args.model)?;
    let dataset = Dataset::load(&args.dataset)?;
    let video = dataset
        .videos
        .iter()
        .find(|v| v.manifest.video_id == args.video)
        .ok_or_else(|| Error::invalid(format!("video {:?} not in dataset", args.video)))?;
    let features = video.features(stream.modality())?;
    let records = export_attention(&model, video, features, resolve_seed(args.seed, None))?;
    let csv = attention_csv(&records);
    match args.out {
        Some(path) => {
            write_file(&path, &csv)?;
            println!(
                "wrote {} attention records to {}",
                records.len(),
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
