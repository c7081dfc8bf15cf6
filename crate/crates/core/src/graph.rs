//! Directed trust graphs.
//!
//! An edge `u -> v` means "u follows (trusts) v": `v` is a followee of `u`
//! and `u` is a follower of `v`. Opinions flow against the edge direction,
//! from followee to follower.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, tag};

/// Dense node index, `0..n` within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("every node was removed by the minimum-followee filter")]
    Annihilated,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Immutable directed trust graph with both adjacency directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustGraph {
    followees: Vec<Vec<NodeId>>,
    followers: Vec<Vec<NodeId>>,
    /// Original identifier of each dense node (identity for generated graphs).
    labels: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub average_degree: f64,
    pub density: f64,
}

/// What `parse_edge_list` silently dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub edge_lines: usize,
    pub duplicates: usize,
    pub self_loops: usize,
}

impl TrustGraph {
    /// Builds a graph over `labels.len()` nodes from dense `(follower, followee)` pairs.
    /// Returns the graph with the number of duplicate edges and self-loops dropped.
    pub fn from_edges(
        labels: Vec<u64>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> (Self, usize, usize) {
        let n = labels.len();
        let mut followees: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut self_loops = 0;
        let mut total = 0;
        for (u, v) in edges {
            assert!(u.index() < n && v.index() < n, "edge ({u}, {v}) out of range");
            if u == v {
                self_loops += 1;
                continue;
            }
            total += 1;
            followees[u.index()].push(v);
        }
        let mut kept = 0;
        for list in &mut followees {
            list.sort_unstable();
            list.dedup();
            kept += list.len();
        }
        let mut followers: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (u, list) in followees.iter().enumerate() {
            for v in list {
                followers[v.index()].push(NodeId::from(u));
            }
        }
        let graph = TrustGraph {
            followees,
            followers,
            labels,
        };
        (graph, total - kept, self_loops)
    }

    /// Graph whose labels are the dense ids themselves.
    pub fn from_dense_edges(n: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        Self::from_edges((0..n as u64).collect(), edges).0
    }

    pub fn node_count(&self) -> usize {
        self.followees.len()
    }

    pub fn edge_count(&self) -> usize {
        self.followees.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.followees.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId::from)
    }

    /// Nodes `id` follows, ascending.
    pub fn followees(&self, id: NodeId) -> &[NodeId] {
        &self.followees[id.index()]
    }

    /// Nodes following `id`, ascending.
    pub fn followers(&self, id: NodeId) -> &[NodeId] {
        &self.followers[id.index()]
    }

    pub fn label(&self, id: NodeId) -> u64 {
        self.labels[id.index()]
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn follows(&self, u: NodeId, v: NodeId) -> bool {
        self.followees(u).binary_search(&v).is_ok()
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.node_count();
        let edges = self.edge_count();
        let average_degree = if n == 0 { 0.0 } else { edges as f64 / n as f64 };
        let density = if n < 2 {
            0.0
        } else {
            edges as f64 / (n as f64 * (n as f64 - 1.0))
        };
        GraphStats {
            nodes: n,
            edges,
            average_degree,
            density,
        }
    }

    /// Subgraph induced by the nodes with `keep[i]`, re-indexed densely in id order.
    pub fn induced(&self, keep: &[bool]) -> TrustGraph {
        let mut remap = vec![None; self.node_count()];
        let mut labels = Vec::new();
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            remap[i] = Some(NodeId::from(labels.len()));
            labels.push(self.labels[i]);
        }
        let edges = self.nodes().flat_map(|u| {
            let remap = &remap;
            self.followees(u)
                .iter()
                .filter_map(move |&v| Some((remap[u.index()]?, remap[v.index()]?)))
        });
        TrustGraph::from_edges(labels, edges.collect::<Vec<_>>()).0
    }

    /// Canonical text form: one `follower followee` pair of original labels per line,
    /// ordered by (follower, followee).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for u in self.nodes() {
            for &v in self.followees(u) {
                out.push_str(&format!("{} {}\n", self.label(u), self.label(v)));
            }
        }
        out
    }
}

/// Parses a SNAP-style edge list. Node ids are re-mapped to `0..n` in ascending
/// order of their original value, so the mapping is independent of line order.
pub fn parse_edge_list(text: &str) -> Result<(TrustGraph, ParseReport), GraphError> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let mut next_id = |what: &str| -> Result<u64, GraphError> {
            let tok = tokens.next().ok_or_else(|| GraphError::Parse {
                line: lineno + 1,
                message: format!("missing {what} id"),
            })?;
            tok.parse::<u64>().map_err(|_| GraphError::Parse {
                line: lineno + 1,
                message: format!("{what} id {tok:?} is not a non-negative integer"),
            })
        };
        let u = next_id("source")?;
        let v = next_id("target")?;
        if let Some(extra) = tokens.next() {
            return Err(GraphError::Parse {
                line: lineno + 1,
                message: format!("unexpected trailing token {extra:?}"),
            });
        }
        raw.push((u, v));
    }

    let mut dense: BTreeMap<u64, NodeId> = BTreeMap::new();
    for &(u, v) in &raw {
        dense.entry(u).or_insert(NodeId(0));
        dense.entry(v).or_insert(NodeId(0));
    }
    for (i, slot) in dense.values_mut().enumerate() {
        *slot = NodeId::from(i);
    }
    let labels: Vec<u64> = dense.keys().copied().collect();
    let edges = raw.iter().map(|(u, v)| (dense[u], dense[v]));
    let (graph, duplicates, self_loops) = TrustGraph::from_edges(labels, edges);
    let report = ParseReport {
        edge_lines: raw.len(),
        duplicates,
        self_loops,
    };
    Ok((graph, report))
}

/// Repeatedly removes nodes with fewer than `min` followees until none remain
/// below the threshold.
pub fn enforce_min_followees(g: &TrustGraph, min: usize) -> Result<TrustGraph, GraphError> {
    let n = g.node_count();
    let mut alive = vec![true; n];
    let mut remaining: Vec<usize> = g.nodes().map(|u| g.followees(u).len()).collect();
    let mut queue: VecDeque<NodeId> = g.nodes().filter(|u| remaining[u.index()] < min).collect();
    for u in &queue {
        alive[u.index()] = false;
    }
    while let Some(u) = queue.pop_front() {
        for &w in g.followers(u) {
            if !alive[w.index()] {
                continue;
            }
            remaining[w.index()] -= 1;
            if remaining[w.index()] < min {
                alive[w.index()] = false;
                queue.push_back(w);
            }
        }
    }
    if !alive.iter().any(|&a| a) {
        return Err(GraphError::Annihilated);
    }
    Ok(g.induced(&alive))
}

/// Random graph where every node follows exactly `degree` distinct other nodes.
pub fn generate_uniform(n: usize, degree: usize, seed: u64) -> Result<TrustGraph, GraphError> {
    if degree == 0 || degree >= n {
        return Err(GraphError::InvalidParameter(format!(
            "uniform graph needs 0 < degree < n (got degree={degree}, n={n})"
        )));
    }
    let mut rng = rng::stream(seed, &[tag::GRAPH, n as u64, degree as u64]);
    let mut edges = Vec::with_capacity(n * degree);
    for u in 0..n {
        // sample among the n-1 other nodes, skipping u
        for j in index::sample(&mut rng, n - 1, degree).into_iter() {
            let v = if j >= u { j + 1 } else { j };
            edges.push((NodeId::from(u), NodeId::from(v)));
        }
    }
    Ok(TrustGraph::from_dense_edges(n, edges))
}

/// `ceil(x)` tolerant to representation error, e.g. 0.13 * 1000.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// The first `ceil(fraction * n)` nodes by descending follower count, ties by
/// ascending id. Returned in that rank order.
pub fn top_influential(g: &TrustGraph, fraction: f64) -> Vec<NodeId> {
    let fraction = fraction.clamp(0.0, 1.0);
    let k = ceil_count(fraction * g.node_count() as f64).min(g.node_count());
    let mut ranked: Vec<NodeId> = g.nodes().collect();
    ranked.sort_by(|a, b| {
        g.followers(*b)
            .len()
            .cmp(&g.followers(*a).len())
            .then(a.cmp(b))
    });
    ranked.truncate(k);
    ranked
}

/// Uniform random subset of `round(fraction * n)` nodes, ascending.
pub fn random_selection(g: &TrustGraph, fraction: f64, seed: u64) -> Vec<NodeId> {
    let n = g.node_count();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut rng = rng::stream(seed, &[tag::FAULTY, n as u64]);
    let mut picked: Vec<NodeId> = index::sample(&mut rng, n, k)
        .into_iter()
        .map(NodeId::from)
        .collect();
    picked.sort_unstable();
    picked
}

/// Number of trust edges from nodes outside `set` to nodes inside it, i.e. how
/// many follow relationships of the remaining nodes point into `set`.
pub fn incoming_trust(g: &TrustGraph, set: &[NodeId]) -> usize {
    let members: HashSet<NodeId> = set.iter().copied().collect();
    set.iter()
        .map(|&v| {
            g.followers(v)
                .iter()
                .filter(|u| !members.contains(u))
                .count()
        })
        .sum()
}
