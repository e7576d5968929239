use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{label_edges, AccountStats, AdminId, LabelRule, NodeId, PasswordReuseGraph, WebsiteNode};
use crate::error::{CoreError, Result};

/// One line of a graph file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphRecord {
    /// Settings that produced the file; ignored on read.
    Config {
        config: serde_json::Value,
    },
    Node {
        id: u32,
        admin: Option<u32>,
        /// Snapshot `site_id` holding this node's features.
        site: u32,
    },
    Edge {
        u: u32,
        v: u32,
        shared: u64,
        reusing: u64,
    },
}

/// Nodes and raw pair statistics as stored on disk. Labels are derived on
/// load so that `tau_gt` and `min_shared` stay configurable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphFile {
    pub nodes: Vec<(NodeId, Option<AdminId>)>,
    pub stats: Vec<AccountStats>,
}

impl GraphFile {
    pub fn from_graph(graph: &PasswordReuseGraph) -> Self {
        Self {
            nodes: graph.nodes().iter().map(|n| (n.id, Some(n.admin))).collect(),
            stats: graph
                .edges()
                .iter()
                .map(|e| AccountStats {
                    u: e.u,
                    v: e.v,
                    shared_users: e.shared_users,
                    reusing_users: e.reusing_users,
                })
                .collect(),
        }
    }

    pub fn is_partitioned(&self) -> bool {
        !self.nodes.is_empty() && self.nodes.iter().all(|(_, a)| a.is_some())
    }

    /// Labels edges and builds the graph. Unassigned nodes go to admin 0.
    pub fn build(&self, rule: LabelRule) -> Result<PasswordReuseGraph> {
        let nodes = self
            .nodes
            .iter()
            .map(|&(id, admin)| WebsiteNode {
                id,
                admin: admin.unwrap_or(AdminId(0)),
            })
            .collect();
        PasswordReuseGraph::new(nodes, label_edges(&self.stats, rule)?)
    }
}

/// Writes `file`, preceded by a config line when `header` is given.
pub fn write_graph_file(path: impl AsRef<Path>, file: &GraphFile, header: Option<&serde_json::Value>) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if let Some(config) = header {
        let rec = GraphRecord::Config { config: config.clone() };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    for &(id, admin) in &file.nodes {
        let rec = GraphRecord::Node {
            id: id.0,
            admin: admin.map(|a| a.0),
            site: id.0,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    for s in &file.stats {
        let rec = GraphRecord::Edge {
            u: s.u.0,
            v: s.v.0,
            shared: s.shared_users,
            reusing: s.reusing_users,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_graph_file(path: impl AsRef<Path>) -> Result<GraphFile> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut file = GraphFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: shown.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        match rec {
            GraphRecord::Config { .. } => {}
            GraphRecord::Node { id, admin, site } => {
                if site != id {
                    return Err(CoreError::Parse {
                        path: shown,
                        line: i + 1,
                        msg: format!("node {id} refers to site {site}; sites must share node ids"),
                    });
                }
                file.nodes.push((NodeId(id), admin.map(AdminId)));
            }
            GraphRecord::Edge { u, v, shared, reusing } => file.stats.push(AccountStats {
                u: NodeId(u),
                v: NodeId(v),
                shared_users: shared,
                reusing_users: reusing,
            }),
        }
    }
    Ok(file)
}
