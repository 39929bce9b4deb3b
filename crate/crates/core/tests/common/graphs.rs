//! Small hand-built graphs for model tests.

use dugraph::graph::{GraphBuildConfig, HeteroGraph, Node, NodeKind, RelationKind};
use rand::Rng;

pub const DV: usize = 3;
pub const DU: usize = 2;
pub const DE: usize = 2;

fn node(id: &str, kind: NodeKind, features: Vec<f64>, t: Option<f64>) -> Node {
    Node { id: id.into(), kind, features, timestamp_days: t }
}

fn link(g: &mut HeteroGraph, r: RelationKind, a: usize, b: usize) {
    g.edges[r.code()].push((a, b));
    g.edges[r.code()].push((b, a));
}

/// Eight nodes touching every relation: three videos, two uploaders, one
/// cluster center, two events. Features are drawn from `lo..hi`.
pub fn tiny_graph(rng: &mut impl Rng, lo: f64, hi: f64) -> HeteroGraph {
    let mut f = |d: usize| (0..d).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    let nodes = vec![
        node("V0", NodeKind::Video, f(DV), Some(1.0)),
        node("V1", NodeKind::Video, f(DV), Some(2.5)),
        node("V2", NodeKind::Video, f(DV), Some(4.0)),
        node("U0", NodeKind::Uploader, f(DU), None),
        node("U1", NodeKind::Uploader, f(DU), None),
        node("C0", NodeKind::ClusterCenter, f(DU), None),
        node("E0", NodeKind::Event, f(DE), Some(1.0)),
        node("E1", NodeKind::Event, f(DE), Some(4.0)),
    ];
    let mut g = HeteroGraph { nodes, edges: Default::default(), config: GraphBuildConfig::default(), tau: None };
    use RelationKind::*;
    link(&mut g, UploaderVideo, 3, 0);
    link(&mut g, UploaderVideo, 3, 1);
    link(&mut g, UploaderVideo, 4, 2);
    link(&mut g, UploaderCluster, 3, 5);
    link(&mut g, UploaderCluster, 4, 5);
    link(&mut g, VideoEvent, 0, 6);
    link(&mut g, VideoEvent, 1, 6);
    link(&mut g, VideoEvent, 2, 7);
    link(&mut g, VideoVideo, 0, 1);
    link(&mut g, EventEvent, 6, 7);
    for i in 0..g.len() {
        g.edges[SelfLoop.code()].push((i, i));
    }
    g.canonicalize();
    g.validate().expect("tiny graph is valid");
    g
}

/// [`tiny_graph`] plus a fourth video and a third uploader: ten nodes.
pub fn ten_node_graph(rng: &mut impl Rng, lo: f64, hi: f64) -> HeteroGraph {
    let mut g = tiny_graph(rng, lo, hi);
    g.nodes.push(node("V3", NodeKind::Video, (0..DV).map(|_| rng.random_range(lo..hi)).collect(), Some(5.5)));
    g.nodes.push(node("U2", NodeKind::Uploader, (0..DU).map(|_| rng.random_range(lo..hi)).collect(), None));
    use RelationKind::*;
    link(&mut g, UploaderVideo, 9, 8);
    link(&mut g, UploaderCluster, 9, 5);
    link(&mut g, VideoEvent, 8, 7);
    link(&mut g, VideoVideo, 2, 8);
    g.edges[SelfLoop.code()].push((8, 8));
    g.edges[SelfLoop.code()].push((9, 9));
    g.canonicalize();
    g.validate().expect("ten-node graph is valid");
    g
}

/// Five nodes: two videos by one uploader on one event, plus its cluster center.
pub fn five_node_graph(rng: &mut impl Rng) -> HeteroGraph {
    let mut f = |d: usize| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let nodes = vec![
        node("V0", NodeKind::Video, f(DV), Some(0.5)),
        node("V1", NodeKind::Video, f(DV), Some(2.0)),
        node("U0", NodeKind::Uploader, f(DU), None),
        node("C0", NodeKind::ClusterCenter, f(DU), None),
        node("E0", NodeKind::Event, f(DE), Some(0.5)),
    ];
    let mut g = HeteroGraph { nodes, edges: Default::default(), config: GraphBuildConfig::default(), tau: None };
    use RelationKind::*;
    link(&mut g, UploaderVideo, 2, 0);
    link(&mut g, UploaderVideo, 2, 1);
    link(&mut g, UploaderCluster, 2, 3);
    link(&mut g, VideoEvent, 0, 4);
    link(&mut g, VideoEvent, 1, 4);
    link(&mut g, VideoVideo, 0, 1);
    for i in 0..g.len() {
        g.edges[SelfLoop.code()].push((i, i));
    }
    g.canonicalize();
    g.validate().expect("five-node graph is valid");
    g
}
