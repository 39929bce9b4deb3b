//! Binary graph file: magic, JSON header, little-endian payload.
//!
//! Layout: `DUGG1`, a `u64` header length, the JSON header, then every node's
//! features as `f32` in node order, then for each relation in code order its
//! edges as `(u32 src, u32 dst)` pairs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphBuildConfig, GraphError, HeteroGraph, Node, NodeKind, RelationKind};

pub const GRAPH_MAGIC: &[u8; 5] = b"DUGG1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    kind: NodeKind,
    timestamp_days: Option<f64>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationEntry {
    name: String,
    code: usize,
    edges: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    build_config: GraphBuildConfig,
    tau: Option<f64>,
    nodes: Vec<NodeEntry>,
    relations: Vec<RelationEntry>,
}

pub fn encode_graph(graph: &HeteroGraph) -> Vec<u8> {
    let header = Header {
        build_config: graph.config.clone(),
        tau: graph.tau,
        nodes: graph
            .nodes
            .iter()
            .map(|n| NodeEntry {
                id: n.id.clone(),
                kind: n.kind,
                timestamp_days: n.timestamp_days,
                dim: n.features.len(),
            })
            .collect(),
        relations: RelationKind::ALL
            .iter()
            .map(|&r| RelationEntry { name: r.name().to_string(), code: r.code(), edges: graph.relation(r).len() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for n in &graph.nodes {
        for &x in &n.features {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    for r in RelationKind::ALL {
        for &(s, d) in graph.relation(r) {
            out.extend_from_slice(&(s as u32).to_le_bytes());
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GraphError::Format("truncated payload".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32, GraphError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_graph(bytes: &[u8]) -> Result<HeteroGraph, GraphError> {
    if bytes.len() < 13 || &bytes[..5] != GRAPH_MAGIC {
        return Err(GraphError::Format("missing DUGG1 magic".into()));
    }
    let mut r = Reader { bytes, pos: 5 };
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| GraphError::Format(format!("header: {e}")))?;
    if header.relations.len() != RelationKind::ALL.len() {
        return Err(GraphError::Format("relation table has the wrong length".into()));
    }

    let mut nodes = Vec::with_capacity(header.nodes.len());
    for entry in header.nodes {
        let features = (0..entry.dim).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?;
        nodes.push(Node { id: entry.id, kind: entry.kind, features, timestamp_days: entry.timestamp_days });
    }
    let mut edges: [Vec<(usize, usize)>; 6] = Default::default();
    for (rel, entry) in RelationKind::ALL.iter().zip(&header.relations) {
        if entry.code != rel.code() || entry.name != rel.name() {
            return Err(GraphError::Format(format!("unexpected relation {} at code {}", entry.name, entry.code)));
        }
        for _ in 0..entry.edges {
            let s = r.u32()? as usize;
            let d = r.u32()? as usize;
            edges[rel.code()].push((s, d));
        }
    }
    if r.pos != bytes.len() {
        return Err(GraphError::Format("trailing bytes after edge payload".into()));
    }
    let graph = HeteroGraph { nodes, edges, config: header.build_config, tau: header.tau };
    graph.validate()?;
    Ok(graph)
}

pub fn write_graph(graph: &HeteroGraph, path: &Path) -> Result<(), GraphError> {
    fs::write(path, encode_graph(graph)).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

pub fn read_graph(path: &Path) -> Result<HeteroGraph, GraphError> {
    let bytes = fs::read(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })?;
    decode_graph(&bytes)
}
