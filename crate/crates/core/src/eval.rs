//! Inference, binary classification metrics, early-detection subsampling
//! and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape};
use crate::dataset::{Dataset, FAKE, REAL};
use crate::model::{classify, propagate, GraphPlan, ModelParams, NetConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    Length { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("node {0} is not a video node")]
    NotVideo(usize),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embeddings file at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Indexed by class: `[real, fake]`.
    pub per_class: [ClassMetrics; 2],
    /// `confusion[label][prediction]`.
    pub confusion: [[usize; 2]; 2],
    pub n_evaluated: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and per-class / macro precision, recall and F1. Undefined
/// ratios count as 0.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Length { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        for v in [p, y] {
            if v > 1 {
                return Err(EvalError::Label(v));
            }
        }
        confusion[y as usize][p as usize] += 1;
    }
    let per_class = [REAL, FAKE].map(|c| {
        let c = c as usize;
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassMetrics { precision, recall, f1, support: actual }
    });
    let mean = |f: fn(&ClassMetrics) -> f64| (f(&per_class[0]) + f(&per_class[1])) / 2.0;
    Ok(MetricsReport {
        accuracy: ratio(confusion[0][0] + confusion[1][1], labels.len()),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        confusion,
        n_evaluated: labels.len(),
    })
}

/// Hard label for a fake-news probability.
pub fn hard_label(probability: f64) -> u8 {
    if probability >= 0.5 {
        FAKE
    } else {
        REAL
    }
}

/// Final-layer states of every node, with no masking.
pub fn node_states(plan: &GraphPlan, params: &ModelParams, cfg: &NetConfig) -> Result<Array2<f64>, EvalError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let x = propagate(&mut tape, plan, &bound, cfg, &[])?.output();
    Ok(tape.value(x).clone())
}

/// Fake probabilities for the given video nodes from one unmasked pass.
pub fn predict(
    plan: &GraphPlan,
    params: &ModelParams,
    cfg: &NetConfig,
    nodes: &[usize],
) -> Result<Vec<f64>, EvalError> {
    let videos = plan.video_nodes();
    if let Some(&bad) = nodes.iter().find(|n| videos.binary_search(n).is_err()) {
        return Err(EvalError::NotVideo(bad));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let x = propagate(&mut tape, plan, &bound, cfg, &[])?.output();
    let rows = tape.gather_rows(x, nodes)?;
    let logits = classify(&mut tape, &bound, rows, cfg.leaky_slope)?;
    let p = tape.sigmoid(logits)?;
    Ok(tape.value(p).column(0).to_vec())
}

/// Keeps, per event, the earliest `ceil(fraction * m)` of its `m` videos
/// (ties broken by id). Uploaders and events are kept as they are.
pub fn early_detection_subsample(dataset: &Dataset, fraction: f64) -> Dataset {
    let mut by_event: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, v) in dataset.videos.iter().enumerate() {
        by_event.entry(v.event_id.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; dataset.videos.len()];
    for members in by_event.values_mut() {
        members.sort_by(|&a, &b| {
            let (va, vb) = (&dataset.videos[a], &dataset.videos[b]);
            va.timestamp_days.total_cmp(&vb.timestamp_days).then_with(|| va.video_id.cmp(&vb.video_id))
        });
        let m = members.len();
        let n = ((fraction * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
        for &i in &members[..n] {
            keep[i] = true;
        }
    }
    Dataset {
        videos: dataset.videos.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v.clone()).collect(),
        uploaders: dataset.uploaders.clone(),
        events: dataset.events.clone(),
    }
}

/// Tab-separated rows: id, label (`-` when unknown), then one column per
/// hidden unit printed with 9 significant digits.
pub fn format_embeddings(ids: &[&str], labels: &[Option<u8>], states: &Array2<f64>) -> String {
    let mut out = String::from("id\tlabel");
    for j in 0..states.ncols() {
        write!(out, "\te{j}").expect("string write");
    }
    out.push('\n');
    for ((id, label), row) in ids.iter().zip(labels).zip(states.rows()) {
        out.push_str(id);
        match label {
            Some(l) => write!(out, "\t{l}"),
            None => write!(out, "\t-"),
        }
        .expect("string write");
        for x in row {
            write!(out, "\t{x:.8e}").expect("string write");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub labels: Vec<Option<u8>>,
    pub states: Array2<f64>,
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, EvalError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(EvalError::Parse { line: 1, message: "missing header".into() })?;
    let width = header.split('\t').count();
    if width < 2 || !header.starts_with("id\tlabel") {
        return Err(EvalError::Parse { line: 1, message: "header must start with id, label".into() });
    }
    let h = width - 2;
    let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let err = |message: String| EvalError::Parse { line: k + 2, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(err(format!("{} fields, expected {width}", fields.len())));
        }
        ids.push(fields[0].to_string());
        labels.push(match fields[1] {
            "-" => None,
            s => Some(s.parse::<u8>().map_err(|e| err(format!("label: {e}")))?),
        });
        for f in &fields[2..] {
            values.push(f.parse::<f64>().map_err(|e| err(format!("value {f:?}: {e}")))?);
        }
    }
    let states = Array2::from_shape_vec((ids.len(), h), values).expect("row widths checked");
    Ok(EmbeddingTable { ids, labels, states })
}

/// Writes final-layer video states, one row per video node in graph order.
pub fn export_embeddings(
    plan: &GraphPlan,
    params: &ModelParams,
    cfg: &NetConfig,
    ids: &[&str],
    labels: &[Option<u8>],
    path: &Path,
) -> Result<(), EvalError> {
    let states = node_states(plan, params, cfg)?;
    let videos = plan.video_nodes();
    let rows = Array2::from_shape_fn((videos.len(), states.ncols()), |(r, c)| states[[videos[r], c]]);
    fs::write(path, format_embeddings(ids, labels, &rows))
        .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

/// Mean and sample standard deviation of per-fold values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std =
        if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

pub fn summarize_folds(folds: &[MetricsReport]) -> FoldSummary {
    let col = |f: fn(&MetricsReport) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    FoldSummary {
        accuracy: col(|m| m.accuracy),
        macro_precision: col(|m| m.macro_precision),
        macro_recall: col(|m| m.macro_recall),
        macro_f1: col(|m| m.macro_f1),
    }
}
