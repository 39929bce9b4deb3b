//! Finite-difference check of the whole model loss.

use dugraph::autodiff::{grad_check, numeric_gradient, AdResult, Tape, Var};
use dugraph::graph::HeteroGraph;
use dugraph::model::{classify, propagate, GraphPlan, ModelDims, ModelParams, NetConfig};
use dugraph::train::{reconstruction_loss, TrainError};
use ndarray::Array2;

pub struct GradientReport {
    /// Max relative error with denominator `max(|a|, |n|, 1e-8)`.
    pub relative_error: f64,
    /// Same, after discounting the central-difference roundoff level
    /// `2 u |f| / eps` from each absolute difference.
    pub roundoff_aware_error: f64,
    pub loss: f64,
}

/// Compares analytic and central-difference gradients of the masked
/// reconstruction loss plus the classification loss of an unmasked pass,
/// over every parameter tensor. Biases and the mask token are moved off
/// zero so their gradients are exercised.
pub fn model_gradient_check(
    graph: &HeteroGraph,
    cfg: &NetConfig,
    dims: ModelDims,
    masked: &[usize],
    eps: f64,
) -> GradientReport {
    let mut template = ModelParams::init(cfg, dims);
    template.mask = Array2::from_shape_fn((1, cfg.hidden_dim), |(_, j)| 0.1 * (j as f64 + 1.0));
    for b in [&mut template.classifier.hidden.bias, &mut template.decoder_video.output.bias] {
        b.mapv_inplace(|_| 0.05);
    }
    let plan = GraphPlan::new(graph, cfg.time_dim).unwrap();
    let n_videos = plan.video_nodes().len();
    let labels = Array2::from_shape_fn((n_videos, 1), |(i, _)| ((i + 1) % 2) as f64);
    let point = template.clone().into_vec();
    let f = |tape: &mut Tape, vars: &[Var]| -> AdResult<Var> {
        let b = template.rebuild(vars.to_vec());
        let rec = reconstruction_loss(tape, &plan, &b, cfg, masked).map_err(|e| match e {
            TrainError::Ad(e) => e,
            other => panic!("{other}"),
        })?;
        let x = propagate(tape, &plan, &b, cfg, &[])?.output();
        let videos = tape.gather_rows(x, plan.video_nodes())?;
        let logits = classify(tape, &b, videos, cfg.leaky_slope)?;
        let y = tape.constant(labels.clone());
        let bce = tape.bce_with_logits(logits, y)?;
        tape.add(rec, bce)
    };
    let relative_error = grad_check(f, &point, eps).unwrap();

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.param(p.clone())).collect();
    let loss_var = f(&mut tape, &vars).unwrap();
    let loss = tape.scalar(loss_var);
    let grads = tape.backward(loss_var).unwrap();
    let numeric = numeric_gradient(&f, &point, eps).unwrap();
    let noise = 2.0 * f64::EPSILON * loss.abs() / eps;
    let mut roundoff_aware_error = 0.0_f64;
    for (v, num) in vars.iter().zip(&numeric) {
        for (a, n) in grads.wrt(&tape, *v).iter().zip(num) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            roundoff_aware_error = roundoff_aware_error.max(((a - n).abs() - noise).max(0.0) / denom);
        }
    }
    GradientReport { relative_error, roundoff_aware_error, loss }
}
