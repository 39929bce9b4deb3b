use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const GRAPH_FILE: &str = "graph.dugg";
pub const MODEL_FILE: &str = "model.dugm";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    write_text(dir, name, &text)
}
