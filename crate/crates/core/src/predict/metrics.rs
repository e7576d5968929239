use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::error::{CoreError, Result};
use crate::graph::{EdgeId, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts over predictions that carry ground truth.
pub fn classification_metrics(predictions: &[Prediction]) -> ClassificationMetrics {
    let mut m = ClassificationMetrics::default();
    for p in predictions {
        let Some(t) = p.truth else { continue };
        match (p.decision, t.label) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = f1_score(m.precision, m.recall);
    m
}

/// Mean squared error between `p_hat` and the true reuse rate, over
/// predictions with ground truth.
pub fn mse(predictions: &[Prediction]) -> Option<f64> {
    let errs: Vec<f64> = predictions
        .iter()
        .filter_map(|p| p.truth.map(|t| (p.p_hat - t.reuse_rate).powi(2)))
        .collect();
    if errs.is_empty() {
        None
    } else {
        Some(errs.iter().sum::<f64>() / errs.len() as f64)
    }
}

/// Mean `p_hat` over each node's incident predictions, by ascending node id.
pub fn risk_scores(predictions: &[Prediction]) -> Vec<(NodeId, f64)> {
    let mut acc: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
    for p in predictions {
        for n in [p.u, p.v] {
            let e = acc.entry(n).or_insert((0.0, 0));
            e.0 += p.p_hat;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect()
}

/// One candidate edge in a node's ranking list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub edge: EdgeId,
    pub p_hat: f64,
    pub positive: bool,
    /// Graded relevance: the true reuse rate.
    pub relevance: f64,
}

fn ranked(c: &[Candidate]) -> Vec<Candidate> {
    let mut s = c.to_vec();
    s.sort_by(|a, b| b.p_hat.total_cmp(&a.p_hat).then(a.edge.cmp(&b.edge)));
    s
}

fn check_k(c: &[Candidate], k: usize) -> Result<()> {
    if k == 0 || k > c.len() {
        return Err(CoreError::config(format!("k = {k} with {} candidates", c.len())));
    }
    Ok(())
}

pub fn precision_at_k(c: &[Candidate], k: usize) -> Result<f64> {
    check_k(c, k)?;
    let hits = ranked(c).iter().take(k).filter(|x| x.positive).count();
    Ok(hits as f64 / k as f64)
}

fn dcg(rel: impl Iterator<Item = f64>) -> f64 {
    rel.enumerate().map(|(i, r)| r / ((i + 2) as f64).log2()).sum()
}

/// Linear-gain nDCG; a list with no relevance at all scores 1.
pub fn ndcg_at_k(c: &[Candidate], k: usize) -> Result<f64> {
    check_k(c, k)?;
    let got = dcg(ranked(c).iter().take(k).map(|x| x.relevance));
    let mut ideal: Vec<f64> = c.iter().map(|x| x.relevance).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal.into_iter().take(k));
    if best == 0.0 {
        Ok(1.0)
    } else {
        Ok(got / best)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub k: usize,
    pub precision_at_k: f64,
    pub ndcg_at_k: f64,
}

/// Metrics at each `k`, averaged over the candidate lists.
pub fn ranking_metrics(lists: &[Vec<Candidate>], ks: &[usize]) -> Result<Vec<RankingRow>> {
    if lists.is_empty() {
        return Err(CoreError::data("no candidate lists to rank"));
    }
    ks.iter()
        .map(|&k| {
            let mut p = 0.0;
            let mut n = 0.0;
            for l in lists {
                p += precision_at_k(l, k)?;
                n += ndcg_at_k(l, k)?;
            }
            let count = lists.len() as f64;
            Ok(RankingRow {
                k,
                precision_at_k: p / count,
                ndcg_at_k: n / count,
            })
        })
        .collect()
}
