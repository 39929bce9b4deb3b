//! Attention normalization measured on a full forward pass.

use dugraph::autodiff::Tape;
use dugraph::graph::HeteroGraph;
use dugraph::model::{propagate, GraphPlan, ModelDims, ModelParams, NetConfig};

/// Largest `|sum - 1|` over every (destination, layer, relation) attention
/// segment, or an error naming a non-positive coefficient.
pub fn attention_sum_deviation(graph: &HeteroGraph, cfg: &NetConfig, dims: ModelDims) -> Result<f64, String> {
    let params = ModelParams::init(cfg, dims);
    let plan = GraphPlan::new(graph, cfg.time_dim).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let prop = propagate(&mut tape, &plan, &bound, cfg, &[]).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (l, layer) in prop.attention.iter().enumerate() {
        for (r, rel) in plan.relations.iter().enumerate() {
            let alpha = tape.value(layer[r].ok_or_else(|| format!("layer {l} relation {r} has no attention"))?);
            let mut sums = vec![0.0; graph.len()];
            for (e, &d) in rel.dst.iter().enumerate() {
                if alpha[[e, 0]] <= 0.0 {
                    return Err(format!("layer {l} relation {r} edge {e}: coefficient {}", alpha[[e, 0]]));
                }
                sums[d] += alpha[[e, 0]];
            }
            for &d in &rel.dst {
                worst = worst.max((sums[d] - 1.0).abs());
            }
        }
    }
    Ok(worst)
}
