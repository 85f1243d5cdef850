//! `lfs`: generate synthetic corpora, train the frame scorer, select frames
//! and evaluate selection strategies.

mod config;
mod corpus;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use lfs_core::captioner::{read_captioner, CaptionerOracle, ToyCaptioner};
use lfs_core::embeddings::read_embeddings;
use lfs_core::evaluation::{evaluate_corpus, write_report_csv, EvalReport, Strategy};
use lfs_core::selector::{soft_distribution, stratified_topk};
use lfs_core::synth::synth_corpus;
use lfs_core::trainer::{train_with, TrainEvent, TrainExample};
use lfs_core::tsnet::{read_checkpoint, tsnet_forward, write_checkpoint, TSNetConfig, TSNetParams};
use lfs_core::LfsError;

use config::FileConfig;

/// Bad flags or config contents; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "lfs", version, about = "Learnable frame selection for video captioning")]
struct Cli {
    /// TOML config with optional [synth], [captioner] and [train] tables
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the seed of the active config section
    #[arg(long, global = true, env = "LFS_SEED")]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores)
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and a matching toy captioner
    Gen(GenArgs),
    /// Train the frame scorer on a corpus
    Train(TrainArgs),
    /// Select K frames from one embedding file and print them as JSON
    Select(SelectArgs),
    /// Write per-frame scores, probabilities and selection flags as CSV
    Importance(ImportanceArgs),
    /// Compare selection strategies over a corpus
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, short = 'o', value_name = "DIR")]
    out: PathBuf,
    /// Number of videos
    #[arg(long, short = 'n')]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Checkpoint path, rewritten after every epoch
    #[arg(long, short = 'o', value_name = "FILE")]
    out: PathBuf,
    /// Step log, one JSON object per line (default: <out>.log.jsonl)
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Captioner file (default: <corpus>/captioner.lfsc)
    #[arg(long, value_name = "FILE")]
    captioner: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct Selection {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    /// Frame budget (default: train.k_max)
    #[arg(long, short = 'k')]
    k: Option<usize>,
    /// Keep the first and last frame (default: train.retain_endpoints)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    retain_endpoints: Option<bool>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    sel: Selection,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[command(flatten)]
    sel: Selection,
    #[arg(long, value_name = "FILE")]
    csv: PathBuf,
    /// Softmax temperature (default: train.tau_end)
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Comma-separated subset of uniform, global_topk, stratified
    #[arg(long, value_delimiter = ',', default_value = "uniform,global_topk,stratified")]
    strategies: Vec<String>,
    #[arg(long, short = 'k')]
    k: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    retain_endpoints: Option<bool>,
    /// Directory for eval.json and eval.csv
    #[arg(long, short = 'o', value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 usage or spec, 3 numerics, 4 I/O or malformed input.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<LfsError>() {
            return match e {
                LfsError::Numerics(_) => 3,
                LfsError::Io(_) | LfsError::Format(_) | LfsError::Data(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 4;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads(cli.jobs)?;
    let mut cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(args) => {
            if let Some(seed) = cli.seed {
                cfg.synth.seed = seed;
            }
            cmd_gen(cfg, args)
        }
        Command::Train(args) => {
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            cmd_train(cfg, args)
        }
        Command::Select(args) => cmd_select(&cfg, args),
        Command::Importance(args) => cmd_importance(&cfg, args),
        Command::Eval(args) => cmd_eval(&cfg, args),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(jobs: Option<usize>) -> anyhow::Result<()> {
    if jobs.is_some_and(|n| n > 1) {
        eprintln!("warning: built without parallel support, --jobs ignored");
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_gen(mut cfg: FileConfig, args: GenArgs) -> anyhow::Result<()> {
    if let Some(n) = args.count {
        cfg.count = n;
    }
    let videos = synth_corpus(&cfg.synth, cfg.count)?;
    let captioner = ToyCaptioner::aligned(&cfg.synth.layout(), cfg.captioner.gain, cfg.captioner.seed)?;
    let manifest = corpus::write_corpus(&args.out, &videos, &captioner, &cfg)?;
    let frames: usize = manifest.videos.iter().map(|v| v.n_frames).sum();
    let events: usize = videos.iter().map(|v| v.events.len()).sum();
    println!(
        "wrote {} videos ({} frames, {} events, dim {}) to {}",
        manifest.videos.len(),
        frames,
        events,
        manifest.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(mut cfg: FileConfig, args: TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let train = &cfg.train;
    train.validate()?;
    let videos = corpus::load_corpus(&args.corpus)?;
    let examples: Vec<TrainExample> = videos.into_iter().map(Into::into).collect();
    let cap_path = args
        .captioner
        .clone()
        .unwrap_or_else(|| args.corpus.join(corpus::CAPTIONER));
    let captioner = read_captioner(&cap_path)?;
    let captioner_before = captioner.checksum();
    let net = train.net_config(captioner.feature_dim());

    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut sink_err: Option<anyhow::Error> = None;
    let mut clipped = 0usize;

    let result = train_with(&examples, &captioner, train, |event| {
        if sink_err.is_some() {
            return;
        }
        let res: anyhow::Result<()> = match event {
            TrainEvent::Step(entry) => {
                clipped += usize::from(entry.clipped);
                serde_json::to_writer(&mut log, entry)
                    .map_err(Into::into)
                    .and_then(|()| log.write_all(b"\n").map_err(Into::into))
            }
            TrainEvent::EpochEnd { epoch, params } => {
                eprintln!("epoch {} done", epoch + 1);
                write_checkpoint(&net, params, &args.out).map_err(Into::into)
            }
            TrainEvent::Aborted { params, error } => {
                eprintln!("training aborted: {error}; keeping last good parameters");
                write_checkpoint(&net, params, &args.out).map_err(Into::into)
            }
        };
        sink_err = res.err();
    });
    log.flush()?;
    if let Some(e) = sink_err {
        return Err(e);
    }

    let captioner_after = captioner.checksum();
    let (status, outcome) = match &result {
        Ok(o) => ("ok", Some(o)),
        Err(_) => ("aborted", None),
    };
    let meta = json!({
        "config": cfg,
        "corpus": args.corpus,
        "captioner": cap_path,
        "captioner_sha256_before": captioner_before,
        "captioner_sha256_after": captioner_after,
        "status": status,
        "steps": outcome.map(|o| o.log.len()),
        "clipped_steps": clipped,
        "epoch_entropy": outcome.map(|o| o.epoch_entropy.clone()),
        "checkpoint_sha256": outcome.map(|o| o.params.checksum()),
        "log": log_path,
    });
    write_json(&with_suffix(&args.out, ".run.json"), &meta)?;
    let outcome = result?;
    println!(
        "trained {} steps, checkpoint {} (sha256 {})",
        outcome.log.len(),
        args.out.display(),
        outcome.params.checksum()
    );
    Ok(())
}

struct Scored {
    net: TSNetConfig,
    video_id: String,
    s: Vec<f64>,
    s_hat: Vec<f64>,
    k: usize,
    retain: bool,
}

fn score_one(cfg: &FileConfig, sel: &Selection) -> anyhow::Result<Scored> {
    let (net, params): (TSNetConfig, TSNetParams) = read_checkpoint(&sel.checkpoint)?;
    let emb = read_embeddings(&sel.embeddings)?;
    let fwd = tsnet_forward(&params, &net, &emb)?;
    Ok(Scored {
        net,
        video_id: emb.video_id().to_owned(),
        s: fwd.s,
        s_hat: fwd.s_hat,
        k: sel.k.unwrap_or(cfg.train.k_max),
        retain: sel.retain_endpoints.unwrap_or(cfg.train.retain_endpoints),
    })
}

fn cmd_select(cfg: &FileConfig, args: SelectArgs) -> anyhow::Result<()> {
    let sc = score_one(cfg, &args.sel)?;
    let result = stratified_topk(&sc.s_hat, sc.k, sc.retain)?;
    result.validate(sc.s_hat.len())?;
    let out = json!({
        "video_id": sc.video_id,
        "k": result.k(),
        "indices": result.indices,
        "segments": result.segments,
        "scores": result.scores,
        "endpoint_retained": result.endpoint_retained,
        "config": {
            "checkpoint": args.sel.checkpoint,
            "embeddings": args.sel.embeddings,
            "retain_endpoints": sc.retain,
            "net": sc.net,
        },
    });
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn cmd_importance(cfg: &FileConfig, args: ImportanceArgs) -> anyhow::Result<()> {
    let sc = score_one(cfg, &args.sel)?;
    let tau = args.tau.unwrap_or(cfg.train.tau_end);
    let field = soft_distribution(&sc.s_hat, tau)?;
    let result = stratified_topk(&sc.s_hat, sc.k, sc.retain)?;
    let mut selected = vec![0u8; sc.s_hat.len()];
    for &t in &result.indices {
        selected[t] = 1;
    }

    let file = File::create(&args.csv).with_context(|| format!("creating {}", args.csv.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "frame_index,s,s_hat,p,selected")?;
    for t in 0..sc.s_hat.len() {
        writeln!(w, "{t},{},{},{},{}", sc.s[t], sc.s_hat[t], field.p[t], selected[t])?;
    }
    w.flush()?;
    write_json(
        &with_suffix(&args.csv, ".json"),
        &json!({
            "video_id": sc.video_id,
            "checkpoint": args.sel.checkpoint,
            "embeddings": args.sel.embeddings,
            "k": sc.k,
            "tau": tau,
            "retain_endpoints": sc.retain,
            "net": sc.net,
        }),
    )?;
    println!("wrote {} rows to {}", sc.s_hat.len(), args.csv.display());
    Ok(())
}

fn cmd_eval(cfg: &FileConfig, args: EvalArgs) -> anyhow::Result<()> {
    let mut strategies = Vec::new();
    for name in &args.strategies {
        let s: Strategy = name.parse().map_err(|e: LfsError| UsageError(e.to_string()))?;
        if !strategies.contains(&s) {
            strategies.push(s);
        }
    }
    let k = args.k.unwrap_or(cfg.train.k_max);
    let retain = args.retain_endpoints.unwrap_or(cfg.train.retain_endpoints);
    let (net, params) = read_checkpoint(&args.checkpoint)?;
    let videos = corpus::load_corpus(&args.corpus)?;
    let report = evaluate_corpus(&params, &net, &videos, k, &strategies, retain)?;

    fs::create_dir_all(&args.out)?;
    write_report_csv(&report, args.out.join("eval.csv"))?;
    write_json(
        &args.out.join("eval.json"),
        &json!({
            "config": {
                "checkpoint": args.checkpoint,
                "corpus": args.corpus,
                "k": k,
                "retain_endpoints": retain,
                "strategies": strategies,
                "net": net,
            },
            "report": report,
        }),
    )?;
    print_table(&report);
    Ok(())
}

fn print_table(report: &EvalReport) {
    println!(
        "{:<12} {:>6} {:>16} {:>16}",
        "strategy", "videos", "event_recall", "dispersion"
    );
    for s in &report.summary {
        println!(
            "{:<12} {:>6} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            s.strategy.name(),
            s.count,
            s.recall_mean,
            s.recall_std,
            s.dispersion_mean,
            s.dispersion_std
        );
    }
}
