use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdminId, EdgeId, EdgeScope, Partitioned};
use crate::error::{CoreError, Result};

/// Edge ids for training (all local labeled edges), validation (cross-admin
/// edges of one admin pair) and test (every other cross-admin edge).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<EdgeId>,
    pub valid: Vec<EdgeId>,
    pub test: Vec<EdgeId>,
    pub valid_pair: (AdminId, AdminId),
}

impl SplitPlan {
    pub fn save(&self, path: impl AsRef<Path>, config: &serde_json::Value) -> Result<()> {
        let mut doc = serde_json::to_value(self)?;
        doc["config"] = config.clone();
        std::fs::write(path, serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Draws two distinct admins uniformly from `0..k`.
pub fn random_admin_pair(k: usize, seed: u64) -> Result<(AdminId, AdminId)> {
    if k < 2 {
        return Err(CoreError::config("a validation pair needs at least two admins"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0..k);
    let mut b = rng.random_range(0..k - 1);
    if b >= a {
        b += 1;
    }
    let (a, b) = (a.min(b), a.max(b));
    Ok((AdminId(a as u32), AdminId(b as u32)))
}

/// Splits labeled edges of a partitioned graph. With `valid_pair = None`
/// the pair is drawn from `seed`. With one admin there are no cross-admin
/// edges, so valid and test are both empty.
pub fn make_split(parts: &Partitioned, valid_pair: Option<(AdminId, AdminId)>, seed: u64) -> Result<SplitPlan> {
    let g = &parts.graph;
    let k = parts.k();
    let train: Vec<EdgeId> = g
        .edges()
        .iter()
        .filter(|e| e.scope == EdgeScope::Local)
        .map(|e| e.id)
        .collect();
    if k == 1 {
        return Ok(SplitPlan {
            train,
            valid: Vec::new(),
            test: Vec::new(),
            valid_pair: (AdminId(0), AdminId(0)),
        });
    }
    let (a, b) = match valid_pair {
        Some(p) => p,
        None => random_admin_pair(k, seed)?,
    };
    if a == b {
        return Err(CoreError::config(format!(
            "validation pair ({}, {}) is not two distinct admins",
            a.0, b.0
        )));
    }
    if a.0 as usize >= k || b.0 as usize >= k {
        return Err(CoreError::config(format!(
            "validation pair ({}, {}) outside 0..{k}",
            a.0, b.0
        )));
    }
    let pair = (a.min(b), a.max(b));
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for e in g.cross_admin_edges() {
        let (Some(x), Some(y)) = (g.admin_of(e.u), g.admin_of(e.v)) else {
            unreachable!("edges reference known nodes");
        };
        if (x.min(y), x.max(y)) == pair {
            valid.push(e.id);
        } else {
            test.push(e.id);
        }
    }
    if valid.is_empty() {
        return Err(CoreError::data(format!(
            "admins {} and {} share no cross-admin edges",
            pair.0 .0, pair.1 .0
        )));
    }
    Ok(SplitPlan {
        train,
        valid,
        test,
        valid_pair: pair,
    })
}
