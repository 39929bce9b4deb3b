use std::fs;
use std::path::Path;

use dugraph::dataset::{event_level_folds, load_dataset, temporal_split, Dataset, Split};
use dugraph::eval::{early_detection_subsample, export_embeddings, summarize_folds, FoldSummary, MetricsReport};
use dugraph::graph::{build_graph, read_graph, write_graph, HeteroGraph};
use dugraph::model::{load_checkpoint, save_checkpoint, GraphPlan, ModelDims, ModelParams, NetConfig};
use dugraph::pipeline::{evaluate_ids, labeled_nodes, predict_ids, run_experiment, train_on_split, ExperimentConfig};
use dugraph::synth::generate;
use dugraph::train::{finetune, pretrain, TrainReport};
use log::info;
use serde::{Deserialize, Serialize};

use crate::args::{
    BuildGraphArgs, EarlyDetectArgs, EvalArgs, GraphArgs, InferArgs, InputArgs, NetArgs, OptimArgs, PretrainArgs,
    SplitArgs, SplitCommandArgs, SplitKind, SynthArgs, TrainArgs,
};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::output::{
    ensure_dir, write_json, write_text, DATASET_FILE, EMBEDDINGS_FILE, GRAPH_FILE, GROUND_TRUTH_FILE, METRICS_FILE,
    MODEL_FILE, PREDICTIONS_FILE, REPORT_FILE, SPLITS_FILE,
};

/// Contents of `splits.json`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsFile {
    pub kind: SplitKind,
    pub splits: Vec<Split>,
}

#[derive(Debug, Serialize)]
struct TrainingReport<'a> {
    pretrain: Option<&'a TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    finetune: Option<&'a TrainReport>,
}

/// Metrics of one model on one test set.
#[derive(Debug, Serialize)]
struct ScoredSplit<'a> {
    split: SplitKind,
    fold: Option<usize>,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

/// Fold means at the top level, then spread and per-fold detail.
#[derive(Debug, Serialize)]
struct CrossValidation<'a> {
    split: SplitKind,
    accuracy: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    summary: &'a FoldSummary,
    folds: &'a [MetricsReport],
}

#[derive(Debug, Serialize)]
struct EarlyDetection<'a> {
    fraction: f64,
    n_videos: usize,
    split: SplitKind,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_data(path: &Path, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
    manifest.input(path)?;
    let ds = load_dataset(path).map_err(|e| CliError::reading(path, e))?;
    info!("loaded {} videos, {} uploaders, {} events", ds.videos.len(), ds.uploaders.len(), ds.events.len());
    Ok(ds)
}

fn check_graph_args(g: &GraphArgs) -> Result<(), CliError> {
    if g.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if !(g.edge_top_frac > 0.0 && g.edge_top_frac <= 1.0) {
        return Err(usage("--edge-top-frac must lie in (0, 1]"));
    }
    if let Some(t) = g.tau {
        if !(-1.0..=1.0).contains(&t) {
            return Err(usage("--tau must lie in [-1, 1]"));
        }
    }
    Ok(())
}

fn check_split_args(s: &SplitArgs) -> Result<(), CliError> {
    if s.splits.is_some() {
        return Ok(());
    }
    match s.split {
        SplitKind::Temporal => {
            if !(s.train_frac > 0.0 && s.val_frac >= 0.0 && s.train_frac + s.val_frac < 1.0) {
                return Err(usage("--train-frac and --val-frac must satisfy 0 < train, 0 <= val, train + val < 1"));
            }
        }
        SplitKind::Event => {
            if s.folds == 0 {
                return Err(usage("--folds must be at least 1"));
            }
            if s.fold >= s.folds {
                return Err(usage(format!("--fold {} is out of range for {} folds", s.fold, s.folds)));
            }
        }
    }
    Ok(())
}

fn check_model_args(
    net: &NetArgs,
    optim: &OptimArgs,
    seed: u64,
) -> Result<(NetConfig, dugraph::train::TrainConfig), CliError> {
    let n = net.config(seed);
    n.validate().map_err(usage)?;
    let t = optim.config(seed);
    t.validate().map_err(|e| usage(e.to_string()))?;
    Ok((n, t))
}

fn resolve_graph(input: &InputArgs, ds: &Dataset, manifest: &mut RunManifest) -> Result<HeteroGraph, CliError> {
    match &input.graph {
        Some(path) => {
            manifest.input(path)?;
            read_graph(path).map_err(|e| CliError::reading(path, e))
        }
        None => build_graph(ds, &input.graph_args.config(input.seed)).map_err(CliError::runtime),
    }
}

fn all_splits(ds: &Dataset, s: &SplitArgs, seed: u64, manifest: &mut RunManifest) -> Result<SplitsFile, CliError> {
    if let Some(path) = &s.splits {
        manifest.input(path)?;
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: SplitsFile = serde_json::from_str(&text).map_err(|e| CliError::reading(path, e))?;
        if file.splits.is_empty() {
            return Err(CliError::reading(path, "no splits"));
        }
        return Ok(file);
    }
    let splits = match s.split {
        SplitKind::Temporal => vec![temporal_split(ds, s.train_frac, s.val_frac).map_err(CliError::runtime)?],
        SplitKind::Event => event_level_folds(ds, s.folds, seed).map_err(CliError::runtime)?,
    };
    Ok(SplitsFile { kind: s.split, splits })
}

/// The split whose test set is scored, with its fold index for event folds.
fn one_split(
    ds: &Dataset,
    s: &SplitArgs,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<(SplitKind, Option<usize>, Split), CliError> {
    let mut file = all_splits(ds, s, seed, manifest)?;
    let n = file.splits.len();
    let fold = if file.kind == SplitKind::Event || n > 1 { Some(s.fold) } else { None };
    let idx = fold.unwrap_or(0);
    if idx >= n {
        return Err(usage(format!("--fold {idx} is out of range for {n} splits")));
    }
    Ok((file.kind, fold, file.splits.swap_remove(idx)))
}

fn experiment(
    net: NetConfig,
    train: dugraph::train::TrainConfig,
    input: &InputArgs,
    no_pretrain: bool,
) -> ExperimentConfig {
    ExperimentConfig { graph: input.graph_args.config(input.seed), net, train, pretrain: !no_pretrain }
}

fn check_dims(path: &Path, found: ModelDims, expected: ModelDims) -> Result<(), CliError> {
    if found != expected {
        return Err(CliError::reading(
            path,
            format!(
                "checkpoint expects feature dims video {} uploader {} event {}, graph has {} {} {}",
                found.video, found.uploader, found.event, expected.video, expected.uploader, expected.event
            ),
        ));
    }
    Ok(())
}

fn save_model(
    out: &Path,
    params: &ModelParams,
    net: &NetConfig,
    dims: ModelDims,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    save_checkpoint(params, net, dims, &out.join(MODEL_FILE)).map_err(CliError::runtime)?;
    manifest.output(MODEL_FILE);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = a.config();
    cfg.validate().map_err(usage)?;
    let mut manifest = RunManifest::new("synth", Some(a.seed), a);
    let (ds, truth) = generate(&cfg).map_err(CliError::Runtime)?;
    ensure_dir(&a.out)?;
    ds.save(&a.out.join(DATASET_FILE)).map_err(CliError::runtime)?;
    write_json(&a.out, GROUND_TRUTH_FILE, &truth)?;
    manifest.output(DATASET_FILE);
    manifest.output(GROUND_TRUTH_FILE);
    info!("wrote {} videos", ds.videos.len());
    manifest.write(&a.out)
}

pub fn build_graph_cmd(a: &BuildGraphArgs) -> Result<(), CliError> {
    check_graph_args(&a.graph_args)?;
    let mut manifest = RunManifest::new("build-graph", Some(a.seed), a);
    let ds = load_data(&a.data, &mut manifest)?;
    let g = build_graph(&ds, &a.graph_args.config(a.seed)).map_err(CliError::runtime)?;
    ensure_dir(&a.out)?;
    write_graph(&g, &a.out.join(GRAPH_FILE)).map_err(CliError::runtime)?;
    manifest.output(GRAPH_FILE);
    info!("graph: {} nodes, threshold {:?}", g.len(), g.tau);
    manifest.write(&a.out)
}

pub fn split(a: &SplitCommandArgs) -> Result<(), CliError> {
    check_split_args(&a.split)?;
    let mut manifest = RunManifest::new("split", Some(a.seed), a);
    let ds = load_data(&a.data, &mut manifest)?;
    let file = all_splits(&ds, &a.split, a.seed, &mut manifest)?;
    ensure_dir(&a.out)?;
    write_json(&a.out, SPLITS_FILE, &file)?;
    manifest.output(SPLITS_FILE);
    manifest.write(&a.out)
}

pub fn pretrain_cmd(a: &PretrainArgs) -> Result<(), CliError> {
    check_graph_args(&a.input.graph_args)?;
    let (net, train) = check_model_args(&a.net, &a.optim, a.input.seed)?;
    let mut manifest = RunManifest::new("pretrain", Some(a.input.seed), a);
    let ds = load_data(&a.input.data, &mut manifest)?;
    let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
    let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
    let (params, report) =
        pretrain(&plan, ModelParams::init(&net, plan.dims), &net, &train).map_err(CliError::runtime)?;
    ensure_dir(&a.input.out)?;
    save_model(&a.input.out, &params, &net, plan.dims, &mut manifest)?;
    write_json(&a.input.out, REPORT_FILE, &TrainingReport { pretrain: Some(&report), finetune: None })?;
    manifest.output(REPORT_FILE);
    manifest.write(&a.input.out)
}

pub fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    check_graph_args(&a.input.graph_args)?;
    check_split_args(&a.split)?;
    let (net, train) = check_model_args(&a.net, &a.optim, a.input.seed)?;
    let seed = a.input.seed;
    let mut manifest = RunManifest::new("train", Some(seed), a);
    let full = load_data(&a.input.data, &mut manifest)?;
    let (kind, fold, split) = one_split(&full, &a.split, seed, &mut manifest)?;
    // nothing past this point sees a test label
    let ds = full.without_labels(&split.test_ids);
    drop(full);
    let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
    let labels = ds.labels();

    let (params, net, dims, pre, fine) = match &a.checkpoint {
        Some(path) => {
            manifest.input(path)?;
            let (params, net, dims) = load_checkpoint(path).map_err(|e| CliError::reading(path, e))?;
            let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
            check_dims(path, dims, plan.dims)?;
            let tr = labeled_nodes(&graph, &labels, &split.train_ids).map_err(CliError::runtime)?;
            let va = labeled_nodes(&graph, &labels, &split.val_ids).map_err(CliError::runtime)?;
            let (params, fine) = finetune(&plan, params, &net, &train, &tr, &va).map_err(CliError::runtime)?;
            (params, net, dims, None, fine)
        }
        None => {
            let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
            let cfg = experiment(net.clone(), train, &a.input, a.no_pretrain);
            let (params, pre, fine) =
                train_on_split(&graph, &plan, &labels, &split, &cfg).map_err(CliError::runtime)?;
            (params, net, plan.dims, pre, fine)
        }
    };
    info!("best epoch {} (monitor macro-F1 {:?})", fine.best_epoch, fine.best_metric);
    let out = &a.input.out;
    ensure_dir(out)?;
    save_model(out, &params, &net, dims, &mut manifest)?;
    write_json(out, REPORT_FILE, &TrainingReport { pretrain: pre.as_ref(), finetune: Some(&fine) })?;
    manifest.output(REPORT_FILE);
    let kept = SplitsFile { kind, splits: vec![split] };
    write_json(out, SPLITS_FILE, &kept)?;
    manifest.output(SPLITS_FILE);
    if let Some(f) = fold {
        info!("trained on fold {f}");
    }
    manifest.write(out)
}

pub fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    check_graph_args(&a.input.graph_args)?;
    check_split_args(&a.split)?;
    let seed = a.input.seed;
    let mut manifest = RunManifest::new("eval", Some(seed), a);
    let ds = load_data(&a.input.data, &mut manifest)?;
    let out = &a.input.out;

    if let Some(path) = &a.checkpoint {
        let (kind, fold, split) = one_split(&ds, &a.split, seed, &mut manifest)?;
        let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
        manifest.input(path)?;
        let (params, net, dims) = load_checkpoint(path).map_err(|e| CliError::reading(path, e))?;
        let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
        check_dims(path, dims, plan.dims)?;
        let m = evaluate_ids(&graph, &plan, &params, &net, &ds.labels(), &split.test_ids).map_err(CliError::runtime)?;
        info!("accuracy {:.4} macro-F1 {:.4} on {} videos", m.accuracy, m.macro_f1, m.n_evaluated);
        ensure_dir(out)?;
        write_json(out, METRICS_FILE, &ScoredSplit { split: kind, fold, metrics: &m })?;
        manifest.output(METRICS_FILE);
        return manifest.write(out);
    }

    let (net, train) = check_model_args(&a.net, &a.optim, seed)?;
    let file = all_splits(&ds, &a.split, seed, &mut manifest)?;
    let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
    let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
    let cfg = experiment(net, train, &a.input, a.no_pretrain);
    let mut folds = Vec::new();
    let mut reports = Vec::new();
    for (k, split) in file.splits.iter().enumerate() {
        let run = run_experiment(&graph, &plan, &ds, split, &cfg).map_err(CliError::runtime)?;
        info!("split {k}: accuracy {:.4} macro-F1 {:.4}", run.test.accuracy, run.test.macro_f1);
        folds.push(run.test);
        reports.push((run.pretrain, run.finetune));
    }
    let summary = summarize_folds(&folds);
    ensure_dir(out)?;
    write_json(
        out,
        METRICS_FILE,
        &CrossValidation {
            split: file.kind,
            accuracy: summary.accuracy.mean,
            macro_precision: summary.macro_precision.mean,
            macro_recall: summary.macro_recall.mean,
            macro_f1: summary.macro_f1.mean,
            summary: &summary,
            folds: &folds,
        },
    )?;
    let reports: Vec<TrainingReport> =
        reports.iter().map(|(p, f)| TrainingReport { pretrain: p.as_ref(), finetune: Some(f) }).collect();
    write_json(out, REPORT_FILE, &reports)?;
    manifest.output(METRICS_FILE);
    manifest.output(REPORT_FILE);
    manifest.write(out)
}

fn inference_inputs(
    a: &InferArgs,
    name: &str,
) -> Result<(RunManifest, Dataset, HeteroGraph, GraphPlan, ModelParams, NetConfig), CliError> {
    check_graph_args(&a.input.graph_args)?;
    let mut manifest = RunManifest::new(name, Some(a.input.seed), a);
    let ds = load_data(&a.input.data, &mut manifest)?;
    let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
    manifest.input(&a.checkpoint)?;
    let (params, net, dims) = load_checkpoint(&a.checkpoint).map_err(|e| CliError::reading(&a.checkpoint, e))?;
    let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
    check_dims(&a.checkpoint, dims, plan.dims)?;
    Ok((manifest, ds, graph, plan, params, net))
}

pub fn predict_cmd(a: &InferArgs) -> Result<(), CliError> {
    let (mut manifest, ds, graph, plan, params, net) = inference_inputs(a, "predict")?;
    let ids: Vec<String> = ds.videos.iter().map(|v| v.video_id.clone()).collect();
    let preds = predict_ids(&graph, &plan, &params, &net, &ids).map_err(CliError::runtime)?;
    let mut text = String::from("video_id\tprobability\tlabel\n");
    for p in &preds {
        text.push_str(&format!("{}\t{:.9}\t{}\n", p.video_id, p.probability, p.label));
    }
    ensure_dir(&a.input.out)?;
    write_text(&a.input.out, PREDICTIONS_FILE, &text)?;
    manifest.output(PREDICTIONS_FILE);
    manifest.write(&a.input.out)
}

pub fn export_cmd(a: &InferArgs) -> Result<(), CliError> {
    let (mut manifest, ds, graph, plan, params, net) = inference_inputs(a, "export-embeddings")?;
    let labels = ds.labels();
    let ids: Vec<&str> = plan.video_nodes().iter().map(|&i| graph.nodes[i].id.as_str()).collect();
    let lab: Vec<Option<u8>> = ids.iter().map(|id| labels.get(*id).copied()).collect();
    ensure_dir(&a.input.out)?;
    export_embeddings(&plan, &params, &net, &ids, &lab, &a.input.out.join(EMBEDDINGS_FILE))
        .map_err(CliError::runtime)?;
    manifest.output(EMBEDDINGS_FILE);
    manifest.write(&a.input.out)
}

pub fn early_detect_cmd(a: &EarlyDetectArgs) -> Result<(), CliError> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(usage("--fraction must lie in (0, 1]"));
    }
    if a.input.graph.is_some() {
        return Err(usage("--graph cannot be combined with early-detect; the graph is rebuilt from the subsample"));
    }
    check_graph_args(&a.input.graph_args)?;
    check_split_args(&a.split)?;
    let seed = a.input.seed;
    let (net, train) = check_model_args(&a.net, &a.optim, seed)?;
    let mut manifest = RunManifest::new("early-detect", Some(seed), a);
    let full = load_data(&a.input.data, &mut manifest)?;
    let ds = early_detection_subsample(&full, a.fraction);
    info!("kept {} of {} videos", ds.videos.len(), full.videos.len());
    let (kind, _, split) = one_split(&ds, &a.split, seed, &mut manifest)?;
    let graph = resolve_graph(&a.input, &ds, &mut manifest)?;
    let plan = GraphPlan::new(&graph, net.time_dim).map_err(CliError::runtime)?;
    let cfg = experiment(net, train, &a.input, a.no_pretrain);
    let run = run_experiment(&graph, &plan, &ds, &split, &cfg).map_err(CliError::runtime)?;
    let out = &a.input.out;
    ensure_dir(out)?;
    ds.save(&out.join(DATASET_FILE)).map_err(CliError::runtime)?;
    write_json(
        out,
        METRICS_FILE,
        &EarlyDetection { fraction: a.fraction, n_videos: ds.videos.len(), split: kind, metrics: &run.test },
    )?;
    write_json(out, REPORT_FILE, &TrainingReport { pretrain: run.pretrain.as_ref(), finetune: Some(&run.finetune) })?;
    for name in [DATASET_FILE, METRICS_FILE, REPORT_FILE] {
        manifest.output(name);
    }
    manifest.write(out)
}
