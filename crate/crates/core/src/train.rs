//! Masked-node reconstruction pretraining and supervised fine-tuning.

use std::time::Instant;

use log::{debug, info};
use ndarray::{Array2, Zip};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Var};
use crate::dataset::floor_count;
use crate::eval::{compute_metrics, hard_label};
use crate::graph::NodeKind;
use crate::model::{classify, decode, init_classifier, propagate, GraphPlan, ModelParams, NetConfig, Params};
use crate::rng::{seeded, stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("video {0} has no label")]
    Unlabeled(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("mask set is empty")]
    EmptyMask,
    #[error("non-finite {what} at {stage} epoch {epoch}")]
    NonFinite { what: &'static str, stage: &'static str, epoch: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    /// Share of the training nodes held out for early stopping when no
    /// validation split exists.
    pub holdout_frac: f64,
    /// Fine-tune only the classifier head.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.30,
            pretrain_epochs: 50,
            finetune_epochs: 50,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 0.0,
            early_stop_patience: 10,
            holdout_frac: 0.1,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("adam_eps must be positive and weight_decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return bad("holdout_frac must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    /// Training loss of each epoch, evaluated before that epoch's update.
    pub losses: Vec<f64>,
    /// Monitored macro-F1 after each epoch's update (fine-tuning only).
    pub monitor_f1: Vec<f64>,
    /// Monitored accuracy after each epoch's update (fine-tuning only).
    pub monitor_accuracy: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

/// Adaptive-moment optimizer state, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One update of every tensor whose name `trainable` accepts:
/// bias-corrected moments, then decoupled weight decay.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<(), TrainError> {
    let names = params.names();
    let grads = grads.map(|_, g| g).into_vec();
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(TrainError::NonFinite { what: "gradient", stage: "optimizer", epoch: state.step as usize });
    }
    state.step += 1;
    let (b1, b2) = cfg.adam_betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps, wd) = (cfg.learning_rate, cfg.adam_eps, cfg.weight_decay);
    let moments = state.m.values_mut().into_iter().zip(state.v.values_mut());
    for (((name, p), g), (m, v)) in names.iter().zip(params.values_mut()).zip(grads).zip(moments) {
        if !trainable(name) {
            continue;
        }
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *p;
        });
    }
    Ok(())
}

fn mask_count(q: f64, n: usize) -> usize {
    let k = floor_count(q, n).min(n);
    if k == 0 && q > 0.0 && n > 0 {
        1
    } else {
        k
    }
}

/// Draws `floor(q * n_z)` nodes per feature space (at least one when
/// `q > 0`), uniformly without replacement. Returned indices are sorted.
pub fn mask_nodes_with(plan: &GraphPlan, q: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for space in [NodeKind::Video, NodeKind::Uploader, NodeKind::Event] {
        let nodes = plan.nodes_in(space);
        let k = mask_count(q, nodes.len());
        out.extend(sample(rng, nodes.len(), k).into_iter().map(|i| nodes[i]));
    }
    out.sort_unstable();
    out
}

pub fn mask_nodes(plan: &GraphPlan, q: f64, seed: u64) -> Vec<usize> {
    mask_nodes_with(plan, q, &mut seeded(seed, stream::MASK))
}

/// Sum over masked nodes of the squared distance between the decoded
/// final state and the node's raw features.
pub fn reconstruction_loss(
    tape: &mut Tape,
    plan: &GraphPlan,
    params: &Params<Var>,
    cfg: &NetConfig,
    masked: &[usize],
) -> Result<Var, TrainError> {
    if masked.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let x = propagate(tape, plan, params, cfg, masked)?.output();
    let mut sorted = masked.to_vec();
    sorted.sort_unstable();
    let mut total: Option<Var> = None;
    for space in [NodeKind::Video, NodeKind::Uploader, NodeKind::Event] {
        let nodes = plan.nodes_in(space);
        let (rows, local): (Vec<usize>, Vec<usize>) =
            nodes.iter().enumerate().filter(|(_, n)| sorted.binary_search(n).is_ok()).map(|(pos, &n)| (n, pos)).unzip();
        if rows.is_empty() {
            continue;
        }
        let states = tape.gather_rows(x, &rows)?;
        let rec = decode(tape, params, space, states, cfg.leaky_slope)?;
        let raw = plan.raw_features(space);
        let target = Array2::from_shape_fn((local.len(), raw.ncols()), |(r, c)| raw[[local[r], c]]);
        let target = tape.constant(target);
        let err = tape.squared_error(rec, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, err)?,
            None => err,
        });
    }
    Ok(total.expect("masked nodes belong to some feature space"))
}

fn gradients(tape: &Tape, loss: Var, bound: &Params<Var>) -> Result<ModelParams, TrainError> {
    let grads = tape.backward(loss)?;
    Ok(bound.map(|_, &v| grads.wrt(tape, v)))
}

fn not_classifier(name: &str) -> bool {
    !name.starts_with("classifier.")
}

/// Runs `pretrain_epochs` reconstruction epochs, drawing a fresh mask each
/// epoch from one seeded stream. The classifier head is left untouched.
pub fn pretrain(
    plan: &GraphPlan,
    mut params: ModelParams,
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = seeded(cfg.seed, stream::MASK);
    let mut state = AdamState::new(&params);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 1..=cfg.pretrain_epochs {
        let masked = mask_nodes_with(plan, cfg.mask_ratio, &mut rng);
        if masked.is_empty() {
            return Err(TrainError::EmptyMask);
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, not_classifier);
        let loss = reconstruction_loss(&mut tape, plan, &bound, net, &masked)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(TrainError::NonFinite { what: "reconstruction loss", stage: "pretrain", epoch });
        }
        let grads = gradients(&tape, loss, &bound)?;
        optimizer_step(&mut params, &grads, &mut state, cfg, not_classifier)?;
        debug!("pretrain epoch {epoch}: loss {value:.6}");
        losses.push(value);
    }
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        info!("pretrain: {} epochs, loss {first:.4} -> {last:.4}", losses.len());
    }
    Ok((
        params,
        TrainReport {
            stage: "pretrain".into(),
            best_epoch: losses.len(),
            losses,
            monitor_f1: Vec::new(),
            monitor_accuracy: Vec::new(),
            best_metric: None,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            seed: cfg.seed,
        },
    ))
}

/// Video node indices with binary labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledNodes {
    pub nodes: Vec<usize>,
    pub labels: Vec<u8>,
}

impl LabeledNodes {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            nodes: idx.iter().map(|&i| self.nodes[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Splits off `floor(frac * n)` training nodes (at least one when two or
/// more are available) as an early-stopping monitor.
pub fn holdout(train: &LabeledNodes, frac: f64, seed: u64) -> (LabeledNodes, LabeledNodes) {
    let n = train.len();
    let mut k = floor_count(frac, n);
    if k == 0 && frac > 0.0 && n >= 2 {
        k = 1;
    }
    let mut rng = seeded(seed, stream::HOLDOUT);
    let mut picked = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let rest: Vec<usize> = (0..n).filter(|i| picked.binary_search(i).is_err()).collect();
    (train.subset(&rest), train.subset(&picked))
}

struct Outputs {
    loss: Option<Var>,
    probabilities: Vec<f64>,
}

fn classification_pass(
    tape: &mut Tape,
    plan: &GraphPlan,
    bound: &Params<Var>,
    net: &NetConfig,
    train: &LabeledNodes,
    monitor: &LabeledNodes,
    with_loss: bool,
) -> Result<Outputs, TrainError> {
    let x = propagate(tape, plan, bound, net, &[])?.output();
    let mut rows = train.nodes.clone();
    rows.extend(&monitor.nodes);
    let states = tape.gather_rows(x, &rows)?;
    let logits = classify(tape, bound, states, net.leaky_slope)?;
    let all = tape.value(logits).column(0).to_vec();
    let probabilities = all[train.len()..].iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
    let loss = if with_loss {
        let idx: Vec<usize> = (0..train.len()).collect();
        let train_logits = tape.gather_rows(logits, &idx)?;
        let y = Array2::from_shape_fn((train.len(), 1), |(i, _)| f64::from(train.labels[i]));
        let y = tape.constant(y);
        Some(tape.bce_with_logits(train_logits, y)?)
    } else {
        None
    };
    Ok(Outputs { loss, probabilities })
}

/// Supervised fine-tuning with a fresh classifier head. Early stopping
/// tracks macro-F1 on `val` when it is nonempty and otherwise on a seeded
/// holdout of `train`; the parameters of the best epoch (earliest on ties)
/// are returned. Training stops once `early_stop_patience` epochs pass
/// without improvement.
pub fn finetune(
    plan: &GraphPlan,
    mut params: ModelParams,
    net: &NetConfig,
    cfg: &TrainConfig,
    train: &LabeledNodes,
    val: &LabeledNodes,
) -> Result<(ModelParams, TrainReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if let Some(&bad) = train.labels.iter().chain(&val.labels).find(|&&l| l > 1) {
        return Err(TrainError::Config(format!("label {bad} is not binary")));
    }
    let start = Instant::now();
    let (train, monitor) =
        if val.is_empty() { holdout(train, cfg.holdout_frac, cfg.seed) } else { (train.clone(), val.clone()) };
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    params.classifier = init_classifier(net, cfg.seed);
    let frozen = cfg.freeze_encoder;
    let trainable = move |name: &str| !frozen || name.starts_with("classifier.");
    let mut state = AdamState::new(&params);

    let mut losses = Vec::new();
    let mut monitor_f1 = Vec::new();
    let mut monitor_accuracy = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut steps = 0;
    loop {
        let can_step = steps < cfg.finetune_epochs;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, trainable);
        let out = classification_pass(&mut tape, plan, &bound, net, &train, &monitor, can_step)?;

        if steps > 0 && !monitor.is_empty() {
            let preds: Vec<u8> = out.probabilities.iter().map(|&p| hard_label(p)).collect();
            let m = compute_metrics(&preds, &monitor.labels).expect("monitor labels validated");
            monitor_f1.push(m.macro_f1);
            monitor_accuracy.push(m.accuracy);
            debug!("finetune epoch {steps}: monitor f1 {:.4} acc {:.4}", m.macro_f1, m.accuracy);
            if best.as_ref().is_none_or(|(_, f, _)| m.macro_f1 > *f) {
                best = Some((steps, m.macro_f1, params.clone()));
            }
            let best_epoch = best.as_ref().map_or(0, |b| b.0);
            if steps - best_epoch > cfg.early_stop_patience {
                break;
            }
        }
        let Some(loss) = out.loss else { break };
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(TrainError::NonFinite { what: "classification loss", stage: "finetune", epoch: steps + 1 });
        }
        let grads = gradients(&tape, loss, &bound)?;
        optimizer_step(&mut params, &grads, &mut state, cfg, trainable)?;
        losses.push(value);
        steps += 1;
    }

    let (best_epoch, best_metric, params) = match best {
        Some((e, f, p)) => (e, Some(f), p),
        None => (steps, None, params),
    };
    info!("finetune: {steps} epochs, best epoch {best_epoch} (monitor f1 {best_metric:?})");
    Ok((
        params,
        TrainReport {
            stage: "finetune".into(),
            losses,
            monitor_f1,
            monitor_accuracy,
            best_epoch,
            best_metric,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            seed: cfg.seed,
        },
    ))
}
