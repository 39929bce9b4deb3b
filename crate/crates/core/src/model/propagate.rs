//! Forward pass: input projection, attention layers, decoders and the
//! classification head, all recorded on an autodiff tape.

use ndarray::Array2;

use super::{time_encode, Mlp, ModelDims, NetConfig, Params, RelationParams};
use crate::autodiff::{segment_softmax_values, AdError, AdResult, Tape, Var};
use crate::graph::{GraphError, HeteroGraph, NodeKind, RelationKind};

/// Edges of one relation in `(dst, src)` order with their time encodings.
#[derive(Debug, Clone)]
pub struct RelationPlan {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Distinct sources, ascending; the state transform runs only on these.
    pub sources: Vec<usize>,
    /// Position of each edge's source within `sources`.
    pub src_local: Vec<usize>,
    /// `E x d_t`; rows are zero where an endpoint has no timestamp.
    pub time: Array2<f64>,
    pub has_time: bool,
}

impl RelationPlan {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Graph structure and raw inputs preprocessed for repeated forward passes.
#[derive(Debug, Clone)]
pub struct GraphPlan {
    pub n_nodes: usize,
    pub dims: ModelDims,
    pub relations: Vec<RelationPlan>,
    /// Node indices per feature space: video, uploader (with cluster centers), event.
    pub space_nodes: [Vec<usize>; 3],
    /// Raw features per feature space, rows aligned with `space_nodes`.
    pub raw: [Array2<f64>; 3],
    /// Row of each node in the stacked `[video; uploader; event]` projection.
    stacked_row: Vec<usize>,
    identity_order: bool,
}

fn space_slot(kind: NodeKind) -> usize {
    match kind.feature_space() {
        NodeKind::Video => 0,
        NodeKind::Event => 2,
        _ => 1,
    }
}

impl GraphPlan {
    pub fn new(graph: &HeteroGraph, time_dim: usize) -> Result<Self, GraphError> {
        if time_dim == 0 || !time_dim.is_multiple_of(2) {
            return Err(GraphError::Config(format!("time dimension {time_dim} must be positive and even")));
        }
        let n = graph.len();
        let dims = ModelDims {
            video: graph.feature_dim(NodeKind::Video),
            uploader: graph.feature_dim(NodeKind::Uploader),
            event: graph.feature_dim(NodeKind::Event),
        };
        let dim_of = [dims.video, dims.uploader, dims.event];
        let mut space_nodes: [Vec<usize>; 3] = Default::default();
        for (i, node) in graph.nodes.iter().enumerate() {
            let slot = space_slot(node.kind);
            if node.features.len() != dim_of[slot] {
                return Err(GraphError::Dimension {
                    what: "node",
                    index: i,
                    expected: dim_of[slot],
                    found: node.features.len(),
                });
            }
            space_nodes[slot].push(i);
        }
        let raw = [0, 1, 2].map(|s| {
            Array2::from_shape_fn((space_nodes[s].len(), dim_of[s]), |(r, c)| {
                graph.nodes[space_nodes[s][r]].features[c]
            })
        });
        let mut stacked_row = vec![0; n];
        let mut offset = 0;
        for nodes in &space_nodes {
            for (pos, &i) in nodes.iter().enumerate() {
                stacked_row[i] = offset + pos;
            }
            offset += nodes.len();
        }
        let identity_order = stacked_row.iter().enumerate().all(|(i, &r)| i == r);

        let relations = RelationKind::ALL
            .iter()
            .map(|&r| {
                let mut edges = graph.relation(r).clone();
                edges.sort_unstable_by_key(|&(s, d)| (d, s));
                if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
                    return Err(GraphError::Invalid(format!("edge ({s}, {d}) out of range")));
                }
                let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
                let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
                let mut sources = src.clone();
                sources.sort_unstable();
                sources.dedup();
                let mut local = vec![usize::MAX; n];
                for (k, &s) in sources.iter().enumerate() {
                    local[s] = k;
                }
                let src_local = src.iter().map(|&s| local[s]).collect();
                let mut time = Array2::zeros((edges.len(), time_dim));
                for (e, &(s, d)) in edges.iter().enumerate() {
                    let delta = if r == RelationKind::SelfLoop { Some(0.0) } else { graph.edge_time_gap(s, d) };
                    if let Some(dt) = delta {
                        for (c, v) in time_encode(dt, time_dim).into_iter().enumerate() {
                            time[[e, c]] = v;
                        }
                    }
                }
                let has_time = time.iter().any(|&v| v != 0.0);
                Ok(RelationPlan { src, dst, sources, src_local, time, has_time })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self { n_nodes: n, dims, relations, space_nodes, raw, stacked_row, identity_order })
    }

    pub fn nodes_in(&self, space: NodeKind) -> &[usize] {
        &self.space_nodes[space_slot(space)]
    }

    pub fn raw_features(&self, space: NodeKind) -> &Array2<f64> {
        &self.raw[space_slot(space)]
    }

    pub fn video_nodes(&self) -> &[usize] {
        &self.space_nodes[0]
    }
}

/// Tape handles for every layer's node states and attention weights.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `x^0 .. x^L`, each `N x h`.
    pub layers: Vec<Var>,
    /// `attention[l][r]`: `E_r x 1` weights, absent when relation `r` has no edges.
    pub attention: Vec<Vec<Option<Var>>>,
}

impl Propagation {
    pub fn output(&self) -> Var {
        *self.layers.last().expect("x^0 always present")
    }
}

fn input_states(tape: &mut Tape, plan: &GraphPlan, params: &Params<Var>, masked: &[usize]) -> AdResult<Var> {
    let projections = [params.proj_video, params.proj_uploader, params.proj_event];
    let mut parts = Vec::new();
    for (raw, w) in plan.raw.iter().zip(projections) {
        if raw.nrows() > 0 {
            let x = tape.constant(raw.clone());
            parts.push(tape.matmul(x, w)?);
        }
    }
    let mut x0 = tape.concat_rows(&parts)?;
    if !plan.identity_order {
        x0 = tape.gather_rows(x0, &plan.stacked_row)?;
    }
    if masked.is_empty() {
        return Ok(x0);
    }
    if let Some(&bad) = masked.iter().find(|&&i| i >= plan.n_nodes) {
        return Err(AdError::Index { op: "mask", index: bad, rows: plan.n_nodes });
    }
    let mut keep = Array2::ones((plan.n_nodes, 1));
    let mut hit = Array2::zeros((plan.n_nodes, 1));
    for &i in masked {
        keep[[i, 0]] = 0.0;
        hit[[i, 0]] = 1.0;
    }
    let keep = tape.constant(keep);
    let hit = tape.constant(hit);
    let kept = tape.mul_rows(x0, keep)?;
    let filled = tape.matmul(hit, params.mask)?;
    tape.add(kept, filled)
}

fn relation_layer(
    tape: &mut Tape,
    rel: &RelationPlan,
    p: &RelationParams<Var>,
    x: Var,
    n: usize,
    slope: f64,
) -> AdResult<(Var, Var)> {
    let xs = if rel.sources.len() == n { x } else { tape.gather_rows(x, &rel.sources)? };
    let transformed = tape.matmul(xs, p.theta_state)?;
    let mut msg = tape.gather_rows(transformed, &rel.src_local)?;

    let target_score = tape.matmul(x, p.att_target)?;
    let target_score = tape.gather_rows(target_score, &rel.dst)?;
    let neighbor_score = tape.matmul(x, p.att_neighbor)?;
    let neighbor_score = tape.gather_rows(neighbor_score, &rel.src)?;
    let mut score = tape.add(target_score, neighbor_score)?;

    if rel.has_time {
        let t = tape.constant(rel.time.clone());
        let time_msg = tape.matmul(t, p.theta_time)?;
        msg = tape.add(msg, time_msg)?;
        let time_score = tape.matmul(t, p.att_time)?;
        score = tape.add(score, time_score)?;
    }
    let score = tape.leaky_relu(score, slope)?;
    let alpha = tape.segment_softmax(score, &rel.dst)?;
    let weighted = tape.mul_rows(msg, alpha)?;
    Ok((tape.scatter_add_rows(weighted, &rel.dst, n)?, alpha))
}

/// Runs all layers. Nodes in `masked` start from the mask vector instead of
/// their projected features but still send messages as usual.
pub fn propagate(
    tape: &mut Tape,
    plan: &GraphPlan,
    params: &Params<Var>,
    cfg: &NetConfig,
    masked: &[usize],
) -> AdResult<Propagation> {
    let n = plan.n_nodes;
    let mut x = input_states(tape, plan, params, masked)?;
    let mut layers = vec![x];
    let mut attention = Vec::with_capacity(cfg.num_layers);
    for (l, layer_params) in params.layers.iter().enumerate() {
        let mut total: Option<Var> = None;
        let mut alphas = vec![None; plan.relations.len()];
        for (r, (rel, p)) in plan.relations.iter().zip(layer_params).enumerate() {
            if rel.is_empty() {
                continue;
            }
            let (agg, alpha) = relation_layer(tape, rel, p, x, n, cfg.leaky_slope)?;
            alphas[r] = Some(alpha);
            total = Some(match total {
                Some(t) => tape.add(t, agg)?,
                None => agg,
            });
        }
        let mut next = match total {
            Some(t) => t,
            None => tape.constant(Array2::zeros((n, cfg.hidden_dim))),
        };
        if l + 1 < params.layers.len() {
            next = tape.leaky_relu(next, cfg.leaky_slope)?;
        }
        x = next;
        layers.push(x);
        attention.push(alphas);
    }
    Ok(Propagation { layers, attention })
}

fn mlp_forward(tape: &mut Tape, mlp: &Mlp<Var>, x: Var, slope: f64) -> AdResult<Var> {
    let h = tape.matmul(x, mlp.hidden.weight)?;
    let h = tape.add_row(h, mlp.hidden.bias)?;
    let h = tape.leaky_relu(h, slope)?;
    let o = tape.matmul(h, mlp.output.weight)?;
    tape.add_row(o, mlp.output.bias)
}

/// Reconstructs raw features of `space` from final states `x` (rows of that space).
pub fn decode(tape: &mut Tape, params: &Params<Var>, space: NodeKind, x: Var, slope: f64) -> AdResult<Var> {
    mlp_forward(tape, params.decoder(space), x, slope)
}

/// Fake-news logits for video states `x`, one row each.
pub fn classify(tape: &mut Tape, params: &Params<Var>, x: Var, slope: f64) -> AdResult<Var> {
    mlp_forward(tape, &params.classifier, x, slope)
}

/// Attention weights of one target over its neighbors, computed directly.
pub fn attention_coefficients(
    target: &[f64],
    neighbors: &[Vec<f64>],
    time_encodings: &[Vec<f64>],
    rel: &RelationParams<Array2<f64>>,
    slope: f64,
) -> Vec<f64> {
    let dot = |a: &[f64], w: &Array2<f64>| a.iter().zip(w.column(0)).map(|(x, y)| x * y).sum::<f64>();
    let base = dot(target, &rel.att_target);
    let scores: Vec<f64> = neighbors
        .iter()
        .zip(time_encodings)
        .map(|(xj, tj)| {
            let s = base + dot(xj, &rel.att_neighbor) + dot(tj, &rel.att_time);
            if s > 0.0 {
                s
            } else {
                slope * s
            }
        })
        .collect();
    segment_softmax_values(&scores, &vec![0; scores.len()])
}
