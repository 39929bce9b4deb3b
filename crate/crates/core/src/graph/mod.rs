//! The dual-community heterogeneous graph: videos, uploaders, uploader
//! cluster centers and events, joined by six typed relations.

mod io;
pub mod kmeans;
pub mod similarity;

pub use io::{decode_graph, encode_graph, read_graph, write_graph, GRAPH_MAGIC};
pub use kmeans::{kmeans, KMeansResult};
pub use similarity::similarity_threshold;

use std::collections::HashMap;
use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot form {k} clusters from {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("{what} {index} has dimension {found}, expected {expected}")]
    Dimension { what: &'static str, index: usize, expected: usize, found: usize },
    #[error("embedding {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("invalid graph configuration: {0}")]
    Config(String),
    #[error("graph invariant violated: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt graph file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Video,
    Uploader,
    ClusterCenter,
    Event,
}

impl NodeKind {
    /// Feature space the node's initial vector lives in; cluster centers
    /// share the uploader space.
    pub fn feature_space(self) -> NodeKind {
        match self {
            NodeKind::ClusterCenter => NodeKind::Uploader,
            k => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    UploaderVideo = 0,
    UploaderCluster = 1,
    VideoEvent = 2,
    VideoVideo = 3,
    EventEvent = 4,
    SelfLoop = 5,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        RelationKind::UploaderVideo,
        RelationKind::UploaderCluster,
        RelationKind::VideoEvent,
        RelationKind::VideoVideo,
        RelationKind::EventEvent,
        RelationKind::SelfLoop,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::UploaderVideo => "uploader_video",
            RelationKind::UploaderCluster => "uploader_cluster",
            RelationKind::VideoEvent => "video_event",
            RelationKind::VideoVideo => "video_video",
            RelationKind::EventEvent => "event_event",
            RelationKind::SelfLoop => "self_loop",
        }
    }

    /// Whether an edge between these endpoint kinds (either direction) fits the relation.
    pub fn admits(self, a: NodeKind, b: NodeKind) -> bool {
        use NodeKind::*;
        let pair = |x, y| (a == x && b == y) || (a == y && b == x);
        match self {
            RelationKind::UploaderVideo => pair(Uploader, Video),
            RelationKind::UploaderCluster => pair(Uploader, ClusterCenter),
            RelationKind::VideoEvent => pair(Video, Event),
            RelationKind::VideoVideo => a == Video && b == Video,
            RelationKind::EventEvent => a == Event && b == Event,
            RelationKind::SelfLoop => a == b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBuildConfig {
    pub k_clusters: usize,
    /// Fraction of event pairs kept as event-event edges.
    pub edge_top_frac: f64,
    /// When set, event pairs with cosine similarity at least this value are
    /// linked instead of using `edge_top_frac`.
    #[serde(default)]
    pub tau_override: Option<f64>,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            k_clusters: 24,
            edge_top_frac: 0.02,
            tau_override: None,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Raw, pre-projection feature vector.
    pub features: Vec<f64>,
    pub timestamp_days: Option<f64>,
}

/// Directed `(src, dst)` pairs; messages flow from `src` into `dst`.
pub type EdgeList = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub nodes: Vec<Node>,
    /// Indexed by [`RelationKind::code`].
    pub edges: [EdgeList; 6],
    pub config: GraphBuildConfig,
    /// Event-event threshold actually applied.
    pub tau: Option<f64>,
}

impl HeteroGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn relation(&self, r: RelationKind) -> &EdgeList {
        &self.edges[r.code()]
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, n)| n.kind == kind).map(|(i, _)| i)
    }

    pub fn video_nodes(&self) -> Vec<usize> {
        self.nodes_of(NodeKind::Video).collect()
    }

    /// Map from video id to node index.
    pub fn video_index(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Video)
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    /// Feature dimension of a feature space, from the first node in it.
    pub fn feature_dim(&self, space: NodeKind) -> usize {
        self.nodes.iter().find(|n| n.kind.feature_space() == space).map_or(0, |n| n.features.len())
    }

    /// Signed gap `t_dst - t_src` in days, if both endpoints carry timestamps.
    pub fn edge_time_gap(&self, src: usize, dst: usize) -> Option<f64> {
        if src == dst {
            return Some(0.0);
        }
        match (self.nodes[src].timestamp_days, self.nodes[dst].timestamp_days) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        }
    }

    /// Undirected edge count of a relation (self loops count once).
    pub fn undirected_count(&self, r: RelationKind) -> usize {
        let e = self.relation(r);
        if r == RelationKind::SelfLoop {
            e.len()
        } else {
            e.len() / 2
        }
    }

    /// Sorts each relation's edges by `(dst, src)` and drops duplicates.
    pub fn canonicalize(&mut self) {
        for e in &mut self.edges {
            e.sort_unstable_by_key(|&(s, d)| (d, s));
            e.dedup();
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if seen.insert((n.kind, n.id.as_str()), i).is_some() {
                return Err(GraphError::Invalid(format!("duplicate node {:?} {}", n.kind, n.id)));
            }
            if n.kind == NodeKind::Video && n.timestamp_days.is_none() {
                return Err(GraphError::Invalid(format!("video {} lacks a timestamp", n.id)));
            }
            if matches!(n.kind, NodeKind::Uploader | NodeKind::ClusterCenter) && n.timestamp_days.is_some() {
                return Err(GraphError::Invalid(format!("{:?} {} carries a timestamp", n.kind, n.id)));
            }
        }
        for r in RelationKind::ALL {
            let edges = self.relation(r);
            let set: std::collections::HashSet<_> = edges.iter().copied().collect();
            for &(s, d) in edges {
                if s >= self.len() || d >= self.len() {
                    return Err(GraphError::Invalid(format!("{} edge ({s},{d}) out of range", r.name())));
                }
                if !r.admits(self.nodes[s].kind, self.nodes[d].kind) {
                    return Err(GraphError::Invalid(format!("{} edge ({s},{d}) has wrong endpoint kinds", r.name())));
                }
                if r == RelationKind::SelfLoop {
                    if s != d {
                        return Err(GraphError::Invalid(format!("self loop ({s},{d})")));
                    }
                } else if s == d || !set.contains(&(d, s)) {
                    return Err(GraphError::Invalid(format!("{} edge ({s},{d}) is not symmetric", r.name())));
                }
            }
        }
        Ok(())
    }
}

fn push_both(list: &mut EdgeList, a: usize, b: usize) {
    list.push((a, b));
    list.push((b, a));
}

/// Builds the graph using each video's own `features`.
pub fn build_graph(dataset: &Dataset, cfg: &GraphBuildConfig) -> Result<HeteroGraph, GraphError> {
    let features: Vec<Vec<f64>> = dataset.videos.iter().map(|v| v.features.clone()).collect();
    build_graph_with_features(dataset, &features, cfg)
}

/// Builds the graph with externally supplied per-video feature vectors, in
/// dataset video order.
pub fn build_graph_with_features(
    dataset: &Dataset,
    video_features: &[Vec<f64>],
    cfg: &GraphBuildConfig,
) -> Result<HeteroGraph, GraphError> {
    if video_features.len() != dataset.videos.len() {
        return Err(GraphError::Config(format!(
            "{} feature vectors for {} videos",
            video_features.len(),
            dataset.videos.len()
        )));
    }
    if cfg.k_clusters == 0 {
        return Err(GraphError::Config("k_clusters must be positive".into()));
    }
    if dataset.uploaders.is_empty() {
        return Err(GraphError::Config("dataset has no uploaders".into()));
    }

    let mut nodes = Vec::new();
    let mut edges: [EdgeList; 6] = Default::default();

    for (v, f) in dataset.videos.iter().zip(video_features) {
        nodes.push(Node {
            id: v.video_id.clone(),
            kind: NodeKind::Video,
            features: f.clone(),
            timestamp_days: Some(v.timestamp_days),
        });
    }
    let n_videos = nodes.len();

    let uploader_base = nodes.len();
    let mut uploader_of = HashMap::new();
    for (i, u) in dataset.uploaders.iter().enumerate() {
        uploader_of.insert(u.uploader_id.as_str(), uploader_base + i);
        nodes.push(Node {
            id: u.uploader_id.clone(),
            kind: NodeKind::Uploader,
            features: u.profile_embedding.clone(),
            timestamp_days: None,
        });
    }

    let n_uploaders = dataset.uploaders.len();
    let mut k = cfg.k_clusters;
    if k > n_uploaders {
        warn!("k_clusters {k} exceeds {n_uploaders} uploaders; clamping");
        k = n_uploaders;
    }
    let embeddings: Vec<Vec<f64>> = dataset.uploaders.iter().map(|u| u.profile_embedding.clone()).collect();
    let clusters = kmeans(&embeddings, k, cfg.seed, cfg.kmeans_max_iters, cfg.kmeans_tol)?;
    let center_base = nodes.len();
    let dim_u = embeddings[0].len();
    for c in 0..k {
        let members: Vec<&Vec<f64>> =
            embeddings.iter().zip(&clusters.assignments).filter(|(_, &a)| a == c).map(|(e, _)| e).collect();
        let features = if members.is_empty() {
            clusters.centers[c].clone()
        } else {
            (0..dim_u).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect()
        };
        nodes.push(Node { id: format!("C{c}"), kind: NodeKind::ClusterCenter, features, timestamp_days: None });
    }
    for (i, &c) in clusters.assignments.iter().enumerate() {
        push_both(&mut edges[RelationKind::UploaderCluster.code()], uploader_base + i, center_base + c);
    }

    let event_base = nodes.len();
    let mut event_of = HashMap::new();
    let mut first_seen = vec![None::<f64>; dataset.events.len()];
    for (i, e) in dataset.events.iter().enumerate() {
        event_of.insert(e.event_id.as_str(), i);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dataset.events.len()];
    for (vi, v) in dataset.videos.iter().enumerate() {
        let u = *uploader_of
            .get(v.uploader_id.as_str())
            .ok_or_else(|| GraphError::Invalid(format!("video {} has unknown uploader", v.video_id)))?;
        let e = *event_of
            .get(v.event_id.as_str())
            .ok_or_else(|| GraphError::Invalid(format!("video {} has unknown event", v.video_id)))?;
        push_both(&mut edges[RelationKind::UploaderVideo.code()], u, vi);
        push_both(&mut edges[RelationKind::VideoEvent.code()], vi, event_base + e);
        members[e].push(vi);
        let t = &mut first_seen[e];
        *t = Some(t.map_or(v.timestamp_days, |t0: f64| t0.min(v.timestamp_days)));
    }
    for (e, rec) in dataset.events.iter().enumerate() {
        nodes.push(Node {
            id: rec.event_id.clone(),
            kind: NodeKind::Event,
            features: rec.event_embedding.clone(),
            timestamp_days: first_seen[e],
        });
    }
    for group in &members {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                push_both(&mut edges[RelationKind::VideoVideo.code()], i, j);
            }
        }
    }

    let mut tau = None;
    if dataset.events.len() >= 2 {
        let emb: Vec<Vec<f64>> = dataset.events.iter().map(|e| e.event_embedding.clone()).collect();
        let kept = match cfg.tau_override {
            Some(t) => {
                tau = Some(t);
                similarity::pairs_above(&emb, t)?
            }
            None => {
                let (t, kept) = similarity_threshold(&emb, cfg.edge_top_frac)?;
                tau = Some(t);
                kept
            }
        };
        for (a, b) in kept {
            push_both(&mut edges[RelationKind::EventEvent.code()], event_base + a, event_base + b);
        }
    }

    for i in 0..nodes.len() {
        edges[RelationKind::SelfLoop.code()].push((i, i));
    }
    debug_assert!(n_videos <= nodes.len());

    let mut graph = HeteroGraph { nodes, edges, config: GraphBuildConfig { k_clusters: k, ..cfg.clone() }, tau };
    graph.canonicalize();
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EventRecord, UploaderRecord, VideoRecord};

    pub(crate) fn toy_dataset(videos: &[(&str, &str, &str, f64)], n_uploaders: usize, n_events: usize) -> Dataset {
        Dataset {
            videos: videos
                .iter()
                .map(|&(id, u, e, t)| VideoRecord {
                    video_id: id.into(),
                    uploader_id: u.into(),
                    event_id: e.into(),
                    timestamp_days: t,
                    label: Some(0),
                    features: vec![t, 1.0],
                })
                .collect(),
            uploaders: (0..n_uploaders)
                .map(|i| UploaderRecord {
                    uploader_id: format!("U{i}"),
                    profile_embedding: vec![i as f64, 1.0, 0.5],
                    raw_profile: None,
                })
                .collect(),
            events: (0..n_events)
                .map(|i| EventRecord {
                    event_id: format!("E{i}"),
                    event_embedding: vec![1.0, i as f64],
                    description: None,
                })
                .collect(),
        }
    }

    fn counts(g: &HeteroGraph) -> Vec<usize> {
        RelationKind::ALL.iter().map(|&r| g.undirected_count(r)).collect()
    }

    #[test]
    fn two_videos_one_event() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 1.0), ("V1", "U1", "E0", 2.0)], 2, 1);
        let cfg = GraphBuildConfig { k_clusters: 1, ..Default::default() };
        let g = build_graph(&ds, &cfg).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(counts(&g), vec![2, 2, 2, 1, 0, 6]);
    }

    #[test]
    fn singleton_graph() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 1.0)], 1, 1);
        let cfg = GraphBuildConfig { k_clusters: 1, ..Default::default() };
        let g = build_graph(&ds, &cfg).unwrap();
        assert_eq!(g.undirected_count(RelationKind::VideoVideo), 0);
        assert_eq!(g.undirected_count(RelationKind::EventEvent), 0);
        assert_eq!(g.tau, None);
    }

    #[test]
    fn event_clique_and_timestamps() {
        let ds = toy_dataset(
            &[
                ("V0", "U0", "E0", 5.0),
                ("V1", "U0", "E0", 3.0),
                ("V2", "U1", "E0", 9.0),
                ("V3", "U1", "E0", 4.0),
                ("V4", "U1", "E1", 7.0),
            ],
            2,
            2,
        );
        let g = build_graph(&ds, &GraphBuildConfig { k_clusters: 2, ..Default::default() }).unwrap();
        let vv = g.relation(RelationKind::VideoVideo);
        assert_eq!(vv.len(), 12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(vv.contains(&(i, j)), i != j);
            }
        }
        let events: Vec<&Node> = g.nodes.iter().filter(|n| n.kind == NodeKind::Event).collect();
        assert_eq!(events[0].timestamp_days, Some(3.0));
        assert_eq!(events[1].timestamp_days, Some(7.0));
        assert_eq!(g.undirected_count(RelationKind::EventEvent), 1);
        assert!(g
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Uploader | NodeKind::ClusterCenter))
            .all(|n| n.timestamp_days.is_none()));
    }

    #[test]
    fn time_gaps() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 10.0), ("V1", "U0", "E0", 13.0)], 1, 1);
        let g = build_graph(&ds, &GraphBuildConfig { k_clusters: 1, ..Default::default() }).unwrap();
        assert_eq!(g.edge_time_gap(0, 1), Some(3.0));
        assert_eq!(g.edge_time_gap(1, 0), Some(-3.0));
        let uploader = g.nodes_of(NodeKind::Uploader).next().unwrap();
        assert_eq!(g.edge_time_gap(uploader, 0), None);
        assert_eq!(g.edge_time_gap(uploader, uploader), Some(0.0));
    }

    #[test]
    fn cluster_centers_are_member_means() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 1.0), ("V1", "U3", "E0", 2.0)], 4, 1);
        let g = build_graph(&ds, &GraphBuildConfig { k_clusters: 1, ..Default::default() }).unwrap();
        let center = g.nodes.iter().find(|n| n.kind == NodeKind::ClusterCenter).unwrap();
        assert_eq!(center.features, vec![1.5, 1.0, 0.5]);
    }

    #[test]
    fn k_clamped_to_uploaders() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 1.0)], 2, 1);
        let g = build_graph(&ds, &GraphBuildConfig { k_clusters: 5, ..Default::default() }).unwrap();
        assert_eq!(g.nodes_of(NodeKind::ClusterCenter).count(), 2);
        assert_eq!(g.config.k_clusters, 2);
    }

    #[test]
    fn deterministic() {
        let ds = toy_dataset(&[("V0", "U0", "E0", 1.0), ("V1", "U1", "E1", 2.0), ("V2", "U2", "E2", 3.0)], 3, 3);
        let cfg = GraphBuildConfig { k_clusters: 2, seed: 9, ..Default::default() };
        assert_eq!(build_graph(&ds, &cfg).unwrap(), build_graph(&ds, &cfg).unwrap());
    }
}
