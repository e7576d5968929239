//! Password-reuse graphs: edge labeling from account statistics,
//! administrator partitioning, split planning and L-hop subgraphs.

mod io;
mod split;
mod subgraph;

pub use io::{read_graph_file, write_graph_file, GraphFile, GraphRecord};
pub use split::{make_split, SplitPlan};
pub use subgraph::{extract_subgraph, Messages, Subgraph};

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdminId(pub u32);

/// Position of an edge in the labeled edge list of the full graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebsiteNode {
    pub id: NodeId,
    pub admin: AdminId,
}

/// Raw per-pair counts from breach data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountStats {
    pub u: NodeId,
    pub v: NodeId,
    pub shared_users: u64,
    pub reusing_users: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeScope {
    Local,
    CrossAdmin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseEdge {
    pub id: EdgeId,
    /// Always `u < v`.
    pub u: NodeId,
    pub v: NodeId,
    pub shared_users: u64,
    pub reusing_users: u64,
    pub reuse_rate: f64,
    pub positive: bool,
    pub scope: EdgeScope,
}

impl ReuseEdge {
    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.u, self.v)
    }

    pub fn label(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub tau_gt: f64,
    pub min_shared: u64,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            tau_gt: 0.5,
            min_shared: 30,
        }
    }
}

pub fn canonical(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Turns account statistics into labeled edges.
///
/// Pairs with fewer than `min_shared` shared users emit no edge. The label
/// is positive iff `reusing / shared > tau_gt` (strict). Output is sorted by
/// canonical endpoints and every edge starts out with `Local` scope; ids are
/// positions in the returned list.
pub fn label_edges(stats: &[AccountStats], rule: LabelRule) -> Result<Vec<ReuseEdge>> {
    if !(0.0..=1.0).contains(&rule.tau_gt) {
        return Err(CoreError::config(format!("tau_gt {} not in [0,1]", rule.tau_gt)));
    }
    let mut pairs: BTreeMap<(NodeId, NodeId), (u64, u64)> = BTreeMap::new();
    for s in stats {
        if s.u == s.v {
            return Err(CoreError::data(format!("self-loop on node {}", s.u)));
        }
        if s.reusing_users > s.shared_users {
            return Err(CoreError::data(format!(
                "pair ({}, {}): {} reusing users exceed {} shared users",
                s.u, s.v, s.reusing_users, s.shared_users
            )));
        }
        let key = canonical(s.u, s.v);
        if pairs.insert(key, (s.shared_users, s.reusing_users)).is_some() {
            return Err(CoreError::data(format!("duplicate pair ({}, {})", key.0, key.1)));
        }
    }
    let edges = pairs
        .into_iter()
        .filter(|(_, (shared, _))| *shared >= rule.min_shared && *shared > 0)
        .enumerate()
        .map(|(i, ((u, v), (shared, reusing)))| {
            let rate = reusing as f64 / shared as f64;
            ReuseEdge {
                id: EdgeId(i as u32),
                u,
                v,
                shared_users: shared,
                reusing_users: reusing,
                reuse_rate: rate,
                positive: rate > rule.tau_gt,
                scope: EdgeScope::Local,
            }
        })
        .collect();
    Ok(edges)
}

/// An undirected labeled graph. The adjacency index used for message
/// passing holds only positive edges of `Local` scope.
#[derive(Clone, Debug)]
pub struct PasswordReuseGraph {
    nodes: Vec<WebsiteNode>,
    index: HashMap<NodeId, usize>,
    edges: Vec<ReuseEdge>,
    edge_index: HashMap<(NodeId, NodeId), usize>,
    adjacency: Vec<Vec<NodeId>>,
}

impl PasswordReuseGraph {
    /// Builds a graph, recomputing each edge's scope from node admins.
    pub fn new(mut nodes: Vec<WebsiteNode>, mut edges: Vec<ReuseEdge>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(CoreError::data(format!("duplicate node id {}", n.id)));
            }
        }
        edges.sort_by_key(|e| (e.u, e.v));
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut edge_index = HashMap::with_capacity(edges.len());
        for (pos, e) in edges.iter_mut().enumerate() {
            if e.u >= e.v {
                return Err(CoreError::data(format!(
                    "edge ({}, {}) is a self-loop or not canonical",
                    e.u, e.v
                )));
            }
            let (Some(&iu), Some(&iv)) = (index.get(&e.u), index.get(&e.v)) else {
                return Err(CoreError::data(format!(
                    "edge ({}, {}) references an unknown node",
                    e.u, e.v
                )));
            };
            if edge_index.insert((e.u, e.v), pos).is_some() {
                return Err(CoreError::data(format!("duplicate edge ({}, {})", e.u, e.v)));
            }
            e.scope = if nodes[iu].admin == nodes[iv].admin {
                EdgeScope::Local
            } else {
                EdgeScope::CrossAdmin
            };
            if e.positive && e.scope == EdgeScope::Local {
                adjacency[iu].push(e.v);
                adjacency[iv].push(e.u);
            }
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        Ok(Self {
            nodes,
            index,
            edges,
            edge_index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[WebsiteNode] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn edges(&self) -> &[ReuseEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn position(&self, v: NodeId) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn node(&self, v: NodeId) -> Option<&WebsiteNode> {
        self.position(v).map(|i| &self.nodes[i])
    }

    pub fn admin_of(&self, v: NodeId) -> Option<AdminId> {
        self.node(v).map(|n| n.admin)
    }

    pub fn edge(&self, a: NodeId, b: NodeId) -> Option<&ReuseEdge> {
        self.edge_index.get(&canonical(a, b)).map(|&i| &self.edges[i])
    }

    pub fn edge_by_id(&self, id: EdgeId) -> Option<&ReuseEdge> {
        // ids are assigned by `label_edges` in sorted order, but a graph may
        // hold a subset, so fall back to a search when positions disagree.
        match self.edges.get(id.0 as usize) {
            Some(e) if e.id == id => Some(e),
            _ => self.edges.iter().find(|e| e.id == id),
        }
    }

    /// Message-passing neighbors of `v`, ascending.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.position(v)
            .map(|i| self.adjacency[i].as_slice())
            .ok_or(CoreError::UnknownNode(v.0))
    }

    pub fn neighbors_at(&self, pos: usize) -> &[NodeId] {
        &self.adjacency[pos]
    }

    pub fn admins(&self) -> Vec<AdminId> {
        let mut a: Vec<AdminId> = self.nodes.iter().map(|n| n.admin).collect();
        a.sort();
        a.dedup();
        a
    }

    /// Sub-graph holding only the given admin's nodes and local edges.
    pub fn local_graph(&self, admin: AdminId) -> Result<PasswordReuseGraph> {
        let nodes: Vec<WebsiteNode> = self.nodes.iter().filter(|n| n.admin == admin).copied().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| e.scope == EdgeScope::Local && self.admin_of(e.u) == Some(admin))
            .copied()
            .collect();
        PasswordReuseGraph::new(nodes, edges)
    }

    pub fn cross_admin_edges(&self) -> impl Iterator<Item = &ReuseEdge> {
        self.edges.iter().filter(|e| e.scope == EdgeScope::CrossAdmin)
    }

    /// Reassigns admins and rebuilds scopes and adjacency.
    pub fn with_admins(&self, assign: &HashMap<NodeId, AdminId>) -> Result<PasswordReuseGraph> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                assign
                    .get(&n.id)
                    .map(|&admin| WebsiteNode { id: n.id, admin })
                    .ok_or(CoreError::UnknownNode(n.id.0))
            })
            .collect::<Result<Vec<_>>>()?;
        PasswordReuseGraph::new(nodes, self.edges.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PartitionSizes {
    /// `K` blocks whose sizes differ by at most one, larger blocks first.
    Even,
    /// `K - 1` blocks of the given size; the last block takes the remainder.
    Block(usize),
    Explicit(Vec<usize>),
}

impl PartitionSizes {
    pub fn resolve(&self, node_count: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(CoreError::config("partition needs at least one admin"));
        }
        let sizes = match self {
            Self::Even => {
                let base = node_count / k;
                let extra = node_count % k;
                (0..k).map(|i| base + usize::from(i < extra)).collect()
            }
            Self::Block(b) => {
                let used = b * (k - 1);
                if used >= node_count {
                    return Err(CoreError::config(format!(
                        "{k} blocks of {b} leave nothing for the last of {node_count} nodes"
                    )));
                }
                let mut s = vec![*b; k - 1];
                s.push(node_count - used);
                s
            }
            Self::Explicit(s) => s.clone(),
        };
        if sizes.len() != k {
            return Err(CoreError::config(format!("{} sizes for {k} admins", sizes.len())));
        }
        if sizes.iter().sum::<usize>() != node_count {
            return Err(CoreError::config(format!(
                "partition sizes sum to {} but the graph has {node_count} nodes",
                sizes.iter().sum::<usize>()
            )));
        }
        if sizes.contains(&0) {
            return Err(CoreError::config("empty partition"));
        }
        Ok(sizes)
    }
}

/// Result of splitting one graph among `K` administrators.
#[derive(Clone, Debug)]
pub struct Partitioned {
    /// Global view with admins assigned; its adjacency excludes cross-admin edges.
    pub graph: PasswordReuseGraph,
    pub locals: Vec<PasswordReuseGraph>,
}

impl Partitioned {
    pub fn k(&self) -> usize {
        self.locals.len()
    }

    pub fn cross_admin_edges(&self) -> Vec<ReuseEdge> {
        self.graph.cross_admin_edges().copied().collect()
    }

    /// Rebuilds per-admin views from an already assigned graph.
    pub fn from_assigned(graph: PasswordReuseGraph) -> Result<Self> {
        let locals = graph
            .admins()
            .into_iter()
            .map(|a| graph.local_graph(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { graph, locals })
    }
}

/// Shuffles node ids with `seed`, then assigns contiguous blocks to admins
/// `0..K` in order.
pub fn partition(graph: &PasswordReuseGraph, k: usize, sizes: &PartitionSizes, seed: u64) -> Result<Partitioned> {
    let sizes = sizes.resolve(graph.node_count(), k)?;
    let mut order: Vec<NodeId> = graph.node_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assign = HashMap::with_capacity(order.len());
    let mut cursor = 0;
    for (admin, &size) in sizes.iter().enumerate() {
        for &id in &order[cursor..cursor + size] {
            assign.insert(id, AdminId(admin as u32));
        }
        cursor += size;
    }
    let global = graph.with_admins(&assign)?;
    Partitioned::from_assigned(global)
}
