//! Baseline samplers, coverage metrics and corpus-level reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::{LfsError, Result};
use crate::par;
use crate::selector::stratified_topk;
use crate::synth::{Event, SyntheticVideo};
use crate::trainer::Toggles;
use crate::tsnet::{tsnet_forward, TSNetConfig, TSNetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Evenly spaced, endpoint-inclusive.
    Uniform,
    /// `K` best learned scores anywhere in the video.
    GlobalTopk,
    /// Best learned score per segment.
    Stratified,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Uniform, Strategy::GlobalTopk, Strategy::Stratified];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::GlobalTopk => "global_topk",
            Strategy::Stratified => "stratified",
        }
    }

    pub fn needs_scores(self) -> bool {
        self != Strategy::Uniform
    }

    /// The learned selector a model trained under `toggles` deploys with.
    pub fn learned(toggles: &Toggles) -> Self {
        if toggles.stratified {
            Strategy::Stratified
        } else {
            Strategy::GlobalTopk
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = LfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Strategy::Uniform),
            "global_topk" | "topk" => Ok(Strategy::GlobalTopk),
            "stratified" | "lfs" => Ok(Strategy::Stratified),
            other => Err(LfsError::param(format!("unknown strategy '{other}'"))),
        }
    }
}

fn check_budget(n: usize, k: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(LfsError::param(format!("budget K={k} invalid for {n} frames")));
    }
    Ok(())
}

/// `round(i·(N−1)/(K−1))` for `i < K`; `[0]` when `K = 1`.
pub fn uniform_sample(n: usize, k: usize) -> Result<Vec<usize>> {
    check_budget(n, k)?;
    if k == 1 {
        return Ok(vec![0]);
    }
    let span = n - 1;
    let steps = k - 1;
    let mut out: Vec<usize> = (0..k).map(|i| (2 * i * span + steps) / (2 * steps)).collect();
    out.dedup();
    Ok(out)
}

/// The `K` highest scores, returned in ascending frame order; ties go to the
/// lower index.
pub fn global_topk(s_hat: &[f64], k: usize) -> Result<Vec<usize>> {
    check_budget(s_hat.len(), k)?;
    let mut order: Vec<usize> = (0..s_hat.len()).collect();
    order.sort_by(|&a, &b| s_hat[b].total_cmp(&s_hat[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Fraction of events with at least one selected frame inside; 1 when there are none.
pub fn event_recall(indices: &[usize], events: &[Event]) -> f64 {
    if events.is_empty() {
        return 1.0;
    }
    let hit = events
        .iter()
        .filter(|e| indices.iter().any(|&t| e.contains(t)))
        .count();
    hit as f64 / events.len() as f64
}

/// Smallest gap between consecutive selected frames, times `K/N`, clipped to
/// `[0, 1]`. An evenly spread selection scores 1, a run of adjacent frames
/// scores `K/N`.
pub fn temporal_dispersion(indices: &[usize], n: usize) -> Result<f64> {
    let k = indices.len();
    if k < 2 {
        return Err(LfsError::param("dispersion needs at least two indices"));
    }
    if !indices.windows(2).all(|w| w[0] < w[1]) || indices[k - 1] >= n {
        return Err(LfsError::data("indices must be sorted, unique and inside the video"));
    }
    let min_gap = indices.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(n);
    Ok((min_gap as f64 * k as f64 / n as f64).clamp(0.0, 1.0))
}

/// Normalized per-frame scores from a trained network.
pub fn score_frames(params: &TSNetParams, net: &TSNetConfig, emb: &EmbeddingSequence) -> Result<Vec<f64>> {
    Ok(tsnet_forward(params, net, emb)?.s_hat)
}

/// Frames chosen by `strategy`; `s_hat` is required for the learned strategies.
pub fn select_with(strategy: Strategy, s_hat: Option<&[f64]>, n: usize, k: usize, retain_endpoints: bool) -> Result<Vec<usize>> {
    let scores = || s_hat.ok_or_else(|| LfsError::param(format!("{strategy} needs frame scores")));
    match strategy {
        Strategy::Uniform => uniform_sample(n, k),
        Strategy::GlobalTopk => global_topk(scores()?, k),
        Strategy::Stratified => Ok(stratified_topk(scores()?, k, retain_endpoints)?.indices),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub video_id: String,
    pub strategy: Strategy,
    pub indices: Vec<usize>,
    pub event_recall: f64,
    pub temporal_dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub count: usize,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub dispersion_mean: f64,
    pub dispersion_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub retain_endpoints: bool,
    pub rows: Vec<VideoEval>,
    pub summary: Vec<StrategySummary>,
}

impl EvalReport {
    pub fn summary_for(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == strategy)
    }

    pub fn rows_for(&self, strategy: Strategy) -> impl Iterator<Item = &VideoEval> {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population mean and standard deviation per strategy, in [`Strategy`] order.
pub fn summarize(rows: &[VideoEval]) -> Vec<StrategySummary> {
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let recall: Vec<f64> = rows.iter().filter(|r| r.strategy == strategy).map(|r| r.event_recall).collect();
        if recall.is_empty() {
            continue;
        }
        let disp: Vec<f64> = rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.temporal_dispersion)
            .collect();
        let (recall_mean, recall_std) = mean_std(&recall);
        let (dispersion_mean, dispersion_std) = mean_std(&disp);
        out.push(StrategySummary {
            strategy,
            count: recall.len(),
            recall_mean,
            recall_std,
            dispersion_mean,
            dispersion_std,
        });
    }
    out
}

/// Aggregates several runs (e.g. seeds): mean and spread of the per-run means.
pub fn aggregate_runs(reports: &[EvalReport]) -> Vec<StrategySummary> {
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let per_run: Vec<&StrategySummary> = reports.iter().filter_map(|r| r.summary_for(strategy)).collect();
        if per_run.is_empty() {
            continue;
        }
        let recall: Vec<f64> = per_run.iter().map(|s| s.recall_mean).collect();
        let disp: Vec<f64> = per_run.iter().map(|s| s.dispersion_mean).collect();
        let (recall_mean, recall_std) = mean_std(&recall);
        let (dispersion_mean, dispersion_std) = mean_std(&disp);
        out.push(StrategySummary {
            strategy,
            count: per_run.len(),
            recall_mean,
            recall_std,
            dispersion_mean,
            dispersion_std,
        });
    }
    out
}

/// Runs every strategy on every video at budget `k`. Rows are ordered by
/// video, then by the order of `strategies`.
pub fn evaluate_corpus(
    params: &TSNetParams,
    net: &TSNetConfig,
    corpus: &[SyntheticVideo],
    k: usize,
    strategies: &[Strategy],
    retain_endpoints: bool,
) -> Result<EvalReport> {
    if strategies.is_empty() {
        return Err(LfsError::param("no strategies requested"));
    }
    let learned = strategies.iter().any(|s| s.needs_scores());
    let per_video = par::try_map_range(corpus.len(), |i| -> Result<Vec<VideoEval>> {
        let video = &corpus[i];
        let n = video.embeddings.n_frames();
        let scores = if learned {
            Some(score_frames(params, net, &video.embeddings)?)
        } else {
            None
        };
        strategies
            .iter()
            .map(|&strategy| {
                let indices = select_with(strategy, scores.as_deref(), n, k, retain_endpoints)?;
                Ok(VideoEval {
                    video_id: video.embeddings.video_id().to_owned(),
                    strategy,
                    event_recall: event_recall(&indices, &video.events),
                    temporal_dispersion: temporal_dispersion(&indices, n)?,
                    indices,
                })
            })
            .collect()
    })?;
    let rows: Vec<VideoEval> = per_video.into_iter().flatten().collect();
    let summary = summarize(&rows);
    Ok(EvalReport {
        k,
        retain_endpoints,
        rows,
        summary,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    video_id: &'a str,
    strategy: &'static str,
    k: usize,
    event_recall: f64,
    temporal_dispersion: f64,
    indices: String,
}

/// One row per video × strategy; indices are space separated.
pub fn write_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        let indices = r.indices.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        w.serialize(CsvRow {
            video_id: &r.video_id,
            strategy: r.strategy.name(),
            k: report.k,
            event_recall: r.event_recall,
            temporal_dispersion: r.temporal_dispersion,
            indices,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: [f64; 8] = [0.1, 0.9, 0.2, 0.3, 0.8, 0.1, 0.5, 0.6];

    fn ev(start: usize, end: usize) -> Event {
        Event { start, end, token: 1 }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_sample(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert_eq!(uniform_sample(9, 3).unwrap(), vec![0, 4, 8]);
        assert_eq!(uniform_sample(5, 1).unwrap(), vec![0]);
        assert_eq!(uniform_sample(16, 4).unwrap(), vec![0, 5, 10, 15]);
        assert!(matches!(uniform_sample(3, 4), Err(LfsError::Param(_))));
    }

    #[test]
    fn uniform_never_dedupes_within_budget() {
        for n in 1..80 {
            for k in 1..=n {
                let u = uniform_sample(n, k).unwrap();
                assert_eq!(u.len(), k);
                assert!(u.windows(2).all(|w| w[0] < w[1]));
                assert_eq!(*u.last().unwrap(), if k == 1 { 0 } else { n - 1 });
            }
        }
    }

    #[test]
    fn global_topk_examples() {
        assert_eq!(global_topk(&S, 4).unwrap(), vec![1, 4, 6, 7]);
        assert_eq!(global_topk(&[2.0; 5], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(global_topk(&S, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert!(global_topk(&S, 9).is_err());
    }

    #[test]
    fn recall_examples() {
        let events = [ev(0, 3), ev(5, 8), ev(10, 12), ev(14, 16), ev(18, 20)];
        assert_eq!(event_recall(&[1, 6, 11, 15, 19], &events), 1.0);
        assert_eq!(event_recall(&[3, 4, 9, 13], &events), 0.0);
        // brute force: three of five events hit
        let picks = [0, 7, 11, 13];
        let hits = events
            .iter()
            .filter(|e| (e.start..e.end).any(|t| picks.contains(&t)))
            .count();
        assert_eq!(hits, 3);
        assert!((event_recall(&picks, &events) - 0.6).abs() < 1e-15);
        assert_eq!(event_recall(&[1], &[]), 1.0);
    }

    #[test]
    fn dispersion_examples() {
        let u = uniform_sample(16, 4).unwrap();
        assert_eq!(temporal_dispersion(&u, 16).unwrap(), 1.0);
        assert!((temporal_dispersion(&[0, 1, 2, 3], 100).unwrap() - 0.04).abs() < 1e-15);
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(temporal_dispersion(&all, 10).unwrap(), 1.0);
        assert!(matches!(temporal_dispersion(&[3], 10), Err(LfsError::Param(_))));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn summaries() {
        let rows = vec![
            VideoEval {
                video_id: "a".into(),
                strategy: Strategy::Uniform,
                indices: vec![],
                event_recall: 0.2,
                temporal_dispersion: 1.0,
            },
            VideoEval {
                video_id: "b".into(),
                strategy: Strategy::Uniform,
                indices: vec![],
                event_recall: 0.6,
                temporal_dispersion: 0.5,
            },
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert!((s[0].recall_mean - 0.4).abs() < 1e-15);
        assert!((s[0].recall_std - 0.2).abs() < 1e-15);
        assert!((s[0].dispersion_mean - 0.75).abs() < 1e-15);
    }
}
