//! Edge probabilities, decisions, metrics and risk reports.

mod metrics;
mod report;

pub use metrics::{
    classification_metrics, f1_score, mse, ndcg_at_k, precision_at_k, ranking_metrics, risk_scores, Candidate,
    ClassificationMetrics, RankingRow,
};
pub use report::{write_loss_plot, RiskReport};

use std::collections::BTreeMap;
use std::sync::Arc;

use ndgrad::{func, ParamSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{EdgeId, NodeId};
use crate::init::{glorot_uniform, zeros};

/// `W_f` maps a `2d` concatenation to `d`; `f` is a `d -> 1` linear layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeHead {
    pub w_f: usize,
    pub f_w: usize,
    pub f_b: usize,
    pub d: usize,
}

impl EdgeHead {
    pub fn register(d: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        params.push("head.W_f", glorot_uniform(rng, 2 * d, d), true)?;
        params.push("head.f.weight", glorot_uniform(rng, d, 1), true)?;
        params.push("head.f.bias", zeros(1, 1), true)?;
        Self::locate(params)
    }

    pub fn locate(params: &ParamSet) -> Result<Self> {
        let get = |name: &str| {
            params
                .slot(name)
                .ok_or_else(|| CoreError::config(format!("parameter {name} missing")))
        };
        let w_f = get("head.W_f")?;
        let d = params.value(w_f).cols();
        Ok(Self {
            w_f,
            f_w: get("head.f.weight")?,
            f_b: get("head.f.bias")?,
            d,
        })
    }

    /// Probabilities `[B x 1]` for row pairs of `h`, averaged over both
    /// concatenation orders.
    ///
    /// `concat(h_u, h_v) W_f` is split as `h_u W_top + h_v W_bottom`, so both
    /// orders reuse the same two per-node projections.
    pub fn probabilities(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h: Var,
        pairs: &[(usize, usize)],
        slope: f64,
    ) -> Result<Var> {
        let d = self.d;
        if tape.value(h).cols() != d {
            return Err(CoreError::config(format!(
                "node vectors have {} columns, head expects {d}",
                tape.value(h).cols()
            )));
        }
        let top = tape.slice_rows(vars[self.w_f], 0, d)?;
        let bottom = tape.slice_rows(vars[self.w_f], d, d)?;
        let p = tape.matmul(h, top)?;
        let q = tape.matmul(h, bottom)?;
        let us: Arc<[usize]> = pairs.iter().map(|e| e.0).collect();
        let vs: Arc<[usize]> = pairs.iter().map(|e| e.1).collect();
        let mut sides = Vec::with_capacity(2);
        for (first, second) in [(&us, &vs), (&vs, &us)] {
            let a = tape.gather_rows(p, first.clone())?;
            let b = tape.gather_rows(q, second.clone())?;
            let z = tape.add(a, b)?;
            let z = tape.leaky_relu(z, slope)?;
            let logit = tape.matmul(z, vars[self.f_w])?;
            let logit = tape.add_row(logit, vars[self.f_b])?;
            sides.push(tape.sigmoid(logit)?);
        }
        let both = tape.add(sides[0], sides[1])?;
        Ok(tape.scale(both, 0.5)?)
    }
}

/// Probability for a single pair of node vectors, outside any tape.
pub fn edge_probability(h_u: &[f64], h_v: &[f64], params: &ParamSet, slope: f64) -> Result<f64> {
    let head = EdgeHead::locate(params)?;
    if h_u.len() != head.d || h_v.len() != head.d {
        return Err(CoreError::config(format!(
            "node vectors of length {} and {}, head expects {}",
            h_u.len(),
            h_v.len(),
            head.d
        )));
    }
    let w_f = params.value(head.w_f);
    let f_w = params.value(head.f_w);
    let f_b = params.value(head.f_b).data()[0];
    let one_order = |a: &[f64], b: &[f64]| -> Result<f64> {
        let cat = Tensor::matrix(1, 2 * head.d, [a, b].concat())?;
        let z = func::leaky_relu(&cat.matmul(w_f)?, slope)?;
        let logit = z.matmul(f_w)?.item()? + f_b;
        Ok(func::sigmoid_scalar(logit))
    };
    Ok(0.5 * (one_order(h_u, h_v)? + one_order(h_v, h_u)?))
}

/// Positive iff `p_hat >= tau`.
pub fn classify(p_hat: f64, tau: f64) -> bool {
    p_hat >= tau
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub label: bool,
    pub reuse_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub edge: EdgeId,
    pub u: NodeId,
    pub v: NodeId,
    pub p_hat: f64,
    pub decision: bool,
    pub truth: Option<Truth>,
}

/// Threshold maximizing F1 on `predictions` over a fixed grid; ties go to
/// the smallest threshold.
pub fn tune_threshold(predictions: &[Prediction]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.5);
    for i in 1..100 {
        let tau = f64::from(i) / 100.0;
        let relabeled: Vec<Prediction> = predictions
            .iter()
            .map(|p| Prediction {
                decision: classify(p.p_hat, tau),
                ..*p
            })
            .collect();
        let f1 = classification_metrics(&relabeled).f1;
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    best.1
}

/// Per-node ranking lists built from evaluated edges, in node order. A node
/// with more than `limit` edges keeps a seeded sample of `limit` of them;
/// nodes with fewer than `min_len` edges are left out. Edges without
/// ground truth are skipped.
pub fn candidate_lists(
    predictions: &[Prediction],
    limit: usize,
    min_len: usize,
    seed: u64,
) -> Result<Vec<Vec<Candidate>>> {
    if min_len == 0 || limit < min_len {
        return Err(CoreError::config(format!(
            "k = {min_len} exceeds the {limit} candidates sampled per node"
        )));
    }
    let mut by_node: BTreeMap<NodeId, Vec<Candidate>> = BTreeMap::new();
    for p in predictions {
        let Some(t) = p.truth else { continue };
        let c = Candidate {
            edge: p.edge,
            p_hat: p.p_hat,
            positive: t.label,
            relevance: t.reuse_rate,
        };
        by_node.entry(p.u).or_default().push(c);
        by_node.entry(p.v).or_default().push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists = Vec::new();
    for (_, mut list) in by_node {
        list.sort_by_key(|c| c.edge);
        if list.len() > limit {
            list.shuffle(&mut rng);
            list.truncate(limit);
            list.sort_by_key(|c| c.edge);
        }
        if list.len() >= min_len {
            lists.push(list);
        }
    }
    if lists.is_empty() {
        return Err(CoreError::config(format!(
            "no node has at least {min_len} candidate edges"
        )));
    }
    Ok(lists)
}
