//! `gebd` — synthesize corpora, train the anticipator, detect boundaries
//! online, score predictions, and check gradients.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gebd::cea::checkpoint::{load_checkpoint, save_checkpoint};
use gebd::cea::{check_model_gradients, param_names, train_with, CeaConfig, LabeledStream, TrainConfig};
use gebd::eval::{evaluate_files, EvalError};
use gebd::io::{load_corpus, write_features, write_jsonl, write_manifest, ManifestEntry, PredictionRecord, Split};
use gebd::obd::{detect_stream, ObdConfig};
use gebd::synth::{generate_splits, SynthSpec};
use gebd::Model;
use settings::{log_resolved, Overrides};

#[derive(Parser)]
#[command(name = "gebd", version, about = "Online generic event boundary detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (features, ground truth, manifest).
    Synth(SynthArgs),
    /// Train the anticipator on the train split of a manifest.
    Train(TrainArgs),
    /// Run the online detector over one split and write predictions.
    Detect(DetectArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the objective.
    Gradcheck(GradcheckArgs),
}

/// Options every configurable subcommand accepts.
#[derive(Args)]
struct Common {
    /// Flat key=value settings file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra setting as key=value; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of training videos.
    #[arg(long, default_value_t = 200)]
    train: usize,
    /// Number of validation videos.
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    frames_min: Option<usize>,
    #[arg(long)]
    frames_max: Option<usize>,
    #[arg(long)]
    events_min: Option<usize>,
    #[arg(long)]
    events_max: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    cluster_gap_min: Option<usize>,
    #[arg(long)]
    cluster_gap_max: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    region_k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl ModelFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("feature_dim", self.feature_dim.map(|v| v.to_string())),
            ("window_len", self.window_len.map(|v| v.to_string())),
            ("model_dim", self.model_dim.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("ff_dim", self.ff_dim.map(|v| v.to_string())),
            ("region_k", self.region_k.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
        ]
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log (JSON Lines); defaults to `<out>.loss.jsonl`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_anchors: Option<usize>,
    #[arg(long)]
    chunk_len: Option<usize>,
    /// Chunks sampled per video per epoch, or `all`.
    #[arg(long)]
    chunks_per_video: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Split to process.
    #[arg(long, default_value = "val")]
    split: Split,
    /// Predictions output (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Include per-frame z-scores in the output.
    #[arg(long)]
    zscores: bool,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Suppress decisions until the queue is full (`true`/`false`).
    #[arg(long)]
    warmup: Option<bool>,
    /// `retain_all` or `inliers_only`.
    #[arg(long)]
    queue_policy: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-threshold table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(EvalError::MissingVideos(_)) = e.downcast_ref::<EvalError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut spec = SynthSpec::default();
    let overrides = Overrides::collect(
        &a.common,
        vec![
            ("seed", a.seed.map(|v| v.to_string())),
            ("feature_dim", a.feature_dim.map(|v| v.to_string())),
            ("frames_min", a.frames_min.map(|v| v.to_string())),
            ("frames_max", a.frames_max.map(|v| v.to_string())),
            ("events_min", a.events_min.map(|v| v.to_string())),
            ("events_max", a.events_max.map(|v| v.to_string())),
            ("noise_std", a.noise_std.map(|v| v.to_string())),
            ("cluster_gap_min", a.cluster_gap_min.map(|v| v.to_string())),
            ("cluster_gap_max", a.cluster_gap_max.map(|v| v.to_string())),
        ],
    )?;
    overrides.apply(|k, v| Ok(spec.set(k, v)?))?;
    spec.num_videos = a.train + a.val;
    let mut pairs = spec.to_pairs();
    pairs.retain(|(k, _)| *k != "num_videos");
    pairs.push(("train_videos", a.train.to_string()));
    pairs.push(("val_videos", a.val.to_string()));
    log_resolved("synth", &pairs);

    let (train, val) = generate_splits(&spec, a.train, a.val)?;
    let feat_dir = a.out.join("features");
    std::fs::create_dir_all(&feat_dir).with_context(|| format!("creating {}", feat_dir.display()))?;
    let mut entries = Vec::new();
    for (corpus, split, gt_name) in [(&train, Split::Train, "train_gt.jsonl"), (&val, Split::Val, "val_gt.jsonl")] {
        for stream in &corpus.streams {
            let rel = PathBuf::from("features").join(format!("{}.oge", stream.video_id));
            write_features(&a.out.join(&rel), stream)?;
            entries.push(ManifestEntry {
                video_id: stream.video_id.clone(),
                split,
                features: rel,
                ground_truth: Some(PathBuf::from(gt_name)),
            });
        }
        write_jsonl(&a.out.join(gt_name), &corpus.ground_truth)?;
    }
    write_manifest(&a.out.join("manifest.jsonl"), &entries)?;
    let settings: String =
        spec.to_pairs().iter().filter(|(k, _)| *k != "num_videos").map(|(k, v)| format!("{k}={v}\n")).collect();
    std::fs::write(a.out.join("synth.settings"), settings)?;
    info!("wrote {} train and {} val videos to {}", a.train, a.val, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&a.manifest, Split::Train)?;
    if corpus.streams.is_empty() {
        bail!("{}: no videos in the train split", a.manifest.display());
    }
    let corpus_dim = corpus.streams[0].dim();
    let mut config = CeaConfig { feature_dim: corpus_dim, ..Default::default() };
    let mut tc = TrainConfig::default();
    let mut flags = a.model.pairs();
    flags.extend([
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_anchors", a.batch_anchors.map(|v| v.to_string())),
        ("chunk_len", a.chunk_len.map(|v| v.to_string())),
        ("chunks_per_video", a.chunks_per_video.clone()),
        ("lr", a.lr.map(|v| v.to_string())),
        ("weight_decay", a.weight_decay.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ]);
    Overrides::collect(&a.common, flags)?.apply(|k, v| Ok(config.set(k, v)? || tc.set(k, v)?))?;
    if config.feature_dim != corpus_dim {
        bail!("feature_dim={} contradicts the corpus feature dimension {corpus_dim}", config.feature_dim);
    }
    config.validate()?;
    tc.validate()?;
    let mut pairs = config.to_pairs();
    pairs.extend(tc.to_pairs());
    log_resolved("train", &pairs);

    let mut data = Vec::with_capacity(corpus.streams.len());
    for (stream, gt) in corpus.streams.into_iter().zip(corpus.ground_truth) {
        let gt = gt.with_context(|| format!("training video {} has no ground truth", stream.video_id))?;
        data.push(LabeledStream::from_ground_truth(stream, &gt));
    }
    let started = Instant::now();
    let outcome = train_with::<f64>(&config, &tc, &data, |e, _| {
        info!("epoch {} loss {:.6} ({:.1}s)", e.epoch, e.train_loss, started.elapsed().as_secs_f64());
    })?;
    save_checkpoint(&a.out, &outcome.params)?;
    let log_path = a.loss_log.unwrap_or_else(|| with_suffix(&a.out, ".loss.jsonl"));
    let records: Vec<serde_json::Value> = outcome
        .log
        .iter()
        .map(|e| {
            serde_json::json!({ "epoch": e.epoch, "train_loss": e.train_loss, "steps": e.steps, "anchors": e.anchors })
        })
        .collect();
    write_jsonl(&log_path, &records)?;
    info!("checkpoint {} loss log {}", a.out.display(), log_path.display());
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn detect(a: DetectArgs) -> Result<ExitCode> {
    let model: Model = load_checkpoint(&a.checkpoint)?;
    let mut cfg = ObdConfig::default();
    let flags = vec![
        ("tau", a.tau.map(|v| v.to_string())),
        ("delta", a.delta.map(|v| v.to_string())),
        ("sigma_floor", a.sigma_floor.map(|v| v.to_string())),
        ("warmup", a.warmup.map(|v| v.to_string())),
        ("queue_policy", a.queue_policy.clone()),
    ];
    Overrides::collect(&a.common, flags)?.apply(|k, v| Ok(cfg.set(k, v)?))?;
    cfg.validate()?;
    let mut pairs = model.config().to_pairs();
    pairs.extend(cfg.to_pairs());
    pairs.push(("split", format!("{:?}", a.split).to_lowercase()));
    log_resolved("detect", &pairs);

    let corpus = load_corpus(&a.manifest, a.split)?;
    let expected = model.config().feature_dim;
    if let Some(s) = corpus.streams.iter().find(|s| s.dim() != expected) {
        bail!("checkpoint expects feature dimension {expected}, but {} has {}", s.video_id, s.dim());
    }
    let mut records: Vec<PredictionRecord> = Vec::with_capacity(corpus.streams.len());
    let mut total = 0;
    for stream in &corpus.streams {
        let det = detect_stream(&model, stream, &cfg)?;
        total += det.boundaries.len();
        records.push(det.to_record(a.zscores));
    }
    write_jsonl(&a.out, &records)?;
    info!("{} boundaries over {} videos -> {}", total, records.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    log_resolved(
        "eval",
        &[("predictions", a.predictions.display().to_string()), ("ground_truth", a.ground_truth.display().to_string())],
    );
    let report = evaluate_files(&a.predictions, &a.ground_truth)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    info!("avg_f1 {:.4} f1@0.05 {:.4}", report.avg_f1, report.f1_at(0.05));
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut config = CeaConfig {
        feature_dim: 16,
        window_len: 4,
        model_dim: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        region_k: 2,
        alpha: 0.5,
    };
    Overrides::collect(&a.common, a.model.pairs())?.apply(|k, v| Ok(config.set(k, v)?))?;
    config.validate()?;
    let mut pairs = config.to_pairs();
    pairs.extend([("h", a.h.to_string()), ("tol", a.tol.to_string()), ("seed", a.seed.to_string())]);
    log_resolved("gradcheck", &pairs);

    let started = Instant::now();
    let report = check_model_gradients(&config, a.seed, a.h, a.tol)?;
    let names = param_names(&config);
    println!("{:<24} {:>14} {:>14} {:>12}  status", "parameter", "analytic", "numeric", "max_rel_err");
    for p in &report.params {
        let ok = p.max_rel_error <= report.tol;
        println!(
            "{:<24} {:>14.6e} {:>14.6e} {:>12.3e}  {}",
            names[p.index],
            p.analytic,
            p.numeric,
            p.max_rel_error,
            if ok { "pass" } else { "FAIL" }
        );
    }
    let passed = report.passed();
    println!(
        "{} parameters, max relative error {:.3e} (tol {:.1e}) in {:.2}s: {}",
        report.params.len(),
        report.max_rel_error(),
        report.tol,
        started.elapsed().as_secs_f64(),
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
