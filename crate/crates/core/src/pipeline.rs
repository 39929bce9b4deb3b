//! End-to-end runs: split resolution, pretraining, fine-tuning and test
//! evaluation on one graph.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataError, Dataset, Split};
use crate::eval::{compute_metrics, hard_label, predict, EvalError, MetricsReport};
use crate::graph::{GraphBuildConfig, GraphError, HeteroGraph};
use crate::model::{CheckpointError, GraphPlan, ModelParams, NetConfig};
use crate::train::{finetune, pretrain, LabeledNodes, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("video \"{0}\" is not in the graph")]
    UnknownVideo(String),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphBuildConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Run reconstruction pretraining before fine-tuning.
    pub pretrain: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphBuildConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            pretrain: true,
        }
    }
}

/// Node indices of `ids`, in order.
pub fn video_nodes(graph: &HeteroGraph, ids: &[String]) -> Result<Vec<usize>, PipelineError> {
    let index = graph.video_index();
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| PipelineError::UnknownVideo(id.clone())))
        .collect()
}

/// Resolves ids to nodes and their labels; every id must be labeled.
pub fn labeled_nodes(
    graph: &HeteroGraph,
    labels: &HashMap<String, u8>,
    ids: &[String],
) -> Result<LabeledNodes, PipelineError> {
    let nodes = video_nodes(graph, ids)?;
    let labels = ids
        .iter()
        .map(|id| labels.get(id).copied().ok_or_else(|| TrainError::Unlabeled(id.clone()).into()))
        .collect::<Result<_, PipelineError>>()?;
    Ok(LabeledNodes { nodes, labels })
}

/// Pretrains (optionally) and fine-tunes on `split`, reading labels of the
/// train and validation ids only.
pub fn train_on_split(
    graph: &HeteroGraph,
    plan: &GraphPlan,
    labels: &HashMap<String, u8>,
    split: &Split,
    cfg: &ExperimentConfig,
) -> Result<(ModelParams, Option<TrainReport>, TrainReport), PipelineError> {
    cfg.net.validate().map_err(PipelineError::Config)?;
    let train = labeled_nodes(graph, labels, &split.train_ids)?;
    let val = labeled_nodes(graph, labels, &split.val_ids)?;
    let params = ModelParams::init(&cfg.net, plan.dims);
    let (params, pre) = if cfg.pretrain && cfg.train.pretrain_epochs > 0 {
        let (p, r) = pretrain(plan, params, &cfg.net, &cfg.train)?;
        (p, Some(r))
    } else {
        (params, None)
    };
    let (params, fine) = finetune(plan, params, &cfg.net, &cfg.train, &train, &val)?;
    Ok((params, pre, fine))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub probability: f64,
    pub label: u8,
}

pub fn predict_ids(
    graph: &HeteroGraph,
    plan: &GraphPlan,
    params: &ModelParams,
    net: &NetConfig,
    ids: &[String],
) -> Result<Vec<Prediction>, PipelineError> {
    let nodes = video_nodes(graph, ids)?;
    let probs = predict(plan, params, net, &nodes)?;
    Ok(ids
        .iter()
        .zip(probs)
        .map(|(id, p)| Prediction { video_id: id.clone(), probability: p, label: hard_label(p) })
        .collect())
}

/// Metrics of `params` on the labeled videos among `ids`.
pub fn evaluate_ids(
    graph: &HeteroGraph,
    plan: &GraphPlan,
    params: &ModelParams,
    net: &NetConfig,
    labels: &HashMap<String, u8>,
    ids: &[String],
) -> Result<MetricsReport, PipelineError> {
    let truth = labeled_nodes(graph, labels, ids)?;
    let probs = predict(plan, params, net, &truth.nodes)?;
    let preds: Vec<u8> = probs.into_iter().map(hard_label).collect();
    Ok(compute_metrics(&preds, &truth.labels)?)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub params: ModelParams,
    pub pretrain: Option<TrainReport>,
    pub finetune: TrainReport,
    pub test: MetricsReport,
}

/// Trains on `split` and scores its test ids. Training sees a copy of the
/// dataset with test labels removed.
pub fn run_experiment(
    graph: &HeteroGraph,
    plan: &GraphPlan,
    dataset: &Dataset,
    split: &Split,
    cfg: &ExperimentConfig,
) -> Result<Experiment, PipelineError> {
    let train_view = dataset.without_labels(&split.test_ids);
    let (params, pre, fine) = train_on_split(graph, plan, &train_view.labels(), split, cfg)?;
    let test = evaluate_ids(graph, plan, &params, &cfg.net, &dataset.labels(), &split.test_ids)?;
    Ok(Experiment { params, pretrain: pre, finetune: fine, test })
}
