use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::{NodeId, PasswordReuseGraph};
use crate::error::{CoreError, Result};

/// Directed message index for a graph of `n` nodes, sorted by `(dst, src)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Messages {
    pub n: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl Messages {
    /// Builds the index from `(dst, src)` pairs in any order.
    pub fn new(n: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        Self {
            n,
            dst: pairs.iter().map(|m| m.0).collect(),
            src: pairs.iter().map(|m| m.1).collect(),
        }
    }

    /// Both directions of every undirected pair.
    pub fn undirected(n: usize, edges: &[(usize, usize)]) -> Self {
        Self::new(n, edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect())
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Number of messages arriving at each node.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &d in self.dst.iter() {
            deg[d] += 1;
        }
        deg
    }
}

/// Induced computation graph around a batch of target pairs.
///
/// Nodes are in ascending id order. Messages are directed copies of every
/// adjacency pair inside the node set, sorted by `(dst, src)`, so summing
/// messages per destination is independent of how adjacency was stored.
#[derive(Clone, Debug)]
pub struct Subgraph {
    pub nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    pub messages: Messages,
    /// Local endpoint indices of each target pair, in batch order.
    pub targets: Vec<(usize, usize)>,
    pub hops: usize,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local(&self, v: NodeId) -> Option<usize> {
        self.index.get(&v).copied()
    }

    fn build(graph: &PasswordReuseGraph, mut nodes: Vec<NodeId>, batch: &[(NodeId, NodeId)], hops: usize) -> Self {
        nodes.sort();
        nodes.dedup();
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut msgs: Vec<(usize, usize)> = Vec::new();
        for (di, &dst) in nodes.iter().enumerate() {
            let pos = graph.position(dst).expect("subgraph nodes come from the graph");
            for nb in graph.neighbors_at(pos) {
                if let Some(&si) = index.get(nb) {
                    msgs.push((di, si));
                }
            }
        }
        let messages = Messages::new(nodes.len(), msgs);
        let targets = batch.iter().map(|(u, v)| (index[u], index[v])).collect();
        Self {
            nodes,
            index,
            messages,
            targets,
            hops,
        }
    }

    /// Every node of `graph`, with the given target pairs.
    pub fn whole(graph: &PasswordReuseGraph, batch: &[(NodeId, NodeId)]) -> Result<Self> {
        check_batch(graph, batch)?;
        Ok(Self::build(graph, graph.node_ids().collect(), batch, usize::MAX))
    }
}

fn check_batch(graph: &PasswordReuseGraph, batch: &[(NodeId, NodeId)]) -> Result<()> {
    for &(u, v) in batch {
        for n in [u, v] {
            if !graph.contains(n) {
                return Err(CoreError::UnknownNode(n.0));
            }
        }
    }
    Ok(())
}

/// All nodes within `hops` message-passing hops of any batch endpoint, plus
/// the adjacency among them.
pub fn extract_subgraph(graph: &PasswordReuseGraph, batch: &[(NodeId, NodeId)], hops: usize) -> Result<Subgraph> {
    check_batch(graph, batch)?;
    let mut depth: HashMap<NodeId, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for &(u, v) in batch {
        for n in [u, v] {
            if depth.insert(n, 0).is_none() {
                queue.push_back(n);
            }
        }
    }
    while let Some(n) = queue.pop_front() {
        let d = depth[&n];
        if d == hops {
            continue;
        }
        for &nb in graph.neighbors(n)? {
            if let std::collections::hash_map::Entry::Vacant(slot) = depth.entry(nb) {
                slot.insert(d + 1);
                queue.push_back(nb);
            }
        }
    }
    Ok(Subgraph::build(graph, depth.into_keys().collect(), batch, hops))
}
