//! Synthetic breach corpora with planted feature/reuse correlations.
//!
//! Each site has a category, a security tier (0 strong to 2 weak), an IP
//! prefix tied to its category, a URL built on a category stem, and a
//! content vector drawn around a per-category centroid. For a pair, the
//! probability that a shared user reuses a password has logit
//!
//! ```text
//! logit(base_reuse)
//!   + category_affinity    * (1.5 (pop[c_u] + pop[c_v]) + [c_u == c_v])
//!   + security_gap_penalty * (lax[t_u] + lax[t_v] - 0.5 |t_u - t_v|)
//!   + noise * N(0, 1)
//! ```
//!
//! with `pop[c] ~ N(0, 1)` per category and `lax = [-1, 0, 1]` per tier.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureRecord, FeatureStore, SecurityPosture, CATEGORY_COUNT, CONTENT_DIM};
use crate::error::{CoreError, Result};
use crate::graph::{AccountStats, GraphFile, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sites: usize,
    /// Number of admins the corpus is meant to be split across.
    pub admins: usize,
    pub seed: u64,
    pub category_affinity: f64,
    pub security_gap_penalty: f64,
    pub base_reuse: f64,
    pub noise: f64,
    pub users_per_pair_range: (u64, u64),
    /// Average number of sampled partner sites per site.
    pub partners_per_site: usize,
    /// Chance that a sampled partner is drawn from the site's own category.
    pub same_category_partner_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sites: 1000,
            admins: 5,
            seed: 0,
            category_affinity: 1.0,
            security_gap_penalty: 1.0,
            base_reuse: 0.4,
            noise: 0.3,
            users_per_pair_range: (20, 400),
            partners_per_site: 30,
            same_category_partner_prob: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.admins == 0 || self.n_sites < 2 * self.admins {
            return Err(CoreError::config(format!(
                "{} sites cannot be split across {} admins (need at least two per admin)",
                self.n_sites, self.admins
            )));
        }
        if !(self.base_reuse > 0.0 && self.base_reuse < 1.0) {
            return Err(CoreError::config("base_reuse must lie in (0, 1)"));
        }
        for (name, v) in [
            ("category_affinity", self.category_affinity),
            ("security_gap_penalty", self.security_gap_penalty),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::config(format!("{name} must be finite and non-negative")));
            }
        }
        let (lo, hi) = self.users_per_pair_range;
        if lo == 0 || lo > hi {
            return Err(CoreError::config(format!("users_per_pair_range ({lo}, {hi}) is empty")));
        }
        if self.partners_per_site == 0 || self.partners_per_site >= self.n_sites {
            return Err(CoreError::config("partners_per_site must be in 1..n_sites"));
        }
        if !(0.0..=1.0).contains(&self.same_category_partner_prob) {
            return Err(CoreError::config("same_category_partner_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Latent attributes the generator plants for each site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteTruth {
    pub category: u8,
    pub tier: u8,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub graph: GraphFile,
    pub features: FeatureStore,
    pub truth: Vec<SiteTruth>,
}

const STEMS: [&str; CATEGORY_COUNT] = [
    "shop", "bank", "news", "game", "mail", "video", "forum", "travel", "edu", "gov", "health", "music", "sport",
    "tech", "food", "photo", "job", "auto", "home", "dating",
];
const TLDS: [&str; 4] = ["com", "net", "org", "io"];
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn make_site(rng: &mut ChaCha8Rng, category: u8, tier: u8, prefix: &[u8; 2], centroid: &[f64]) -> FeatureRecord {
    let ip = Ipv4Addr::new(prefix[0], prefix[1], rng.random(), rng.random_range(1..255));
    let len = rng.random_range(3..9);
    let suffix: String = (0..len)
        .map(|_| *LETTERS.choose(rng).expect("non-empty") as char)
        .collect();
    let tld = TLDS[usize::from(tier) % TLDS.len()];
    let url = format!("{}{}.{}", STEMS[usize::from(category)], suffix, tld);
    let content = centroid.iter().map(|&c| round6(0.8 * c + 0.6 * normal(rng))).collect();
    let t = f64::from(tier);
    let software_count = (1.0 + 2.0 * t + 1.5 * normal(rng).abs()).round() as u32;
    let avg_cves = round6((0.5 + 2.0 * t + 0.5 * normal(rng)).max(0.0));
    let avg_cvss = round6((2.0 + 2.5 * t + 0.8 * normal(rng)).clamp(0.0, 10.0));
    let max_cvss = round6((avg_cvss + 1.0 + normal(rng).abs()).min(10.0));
    let https_ok = rng.random::<f64>() > 0.15 + 0.35 * t;
    let cert_error_count = if https_ok {
        0
    } else {
        rng.random_range(1..=1 + u32::from(tier))
    };
    FeatureRecord {
        ip,
        category,
        content,
        url,
        security: SecurityPosture {
            software_count,
            avg_cves_per_software: avg_cves,
            avg_cvss,
            max_cvss,
            https_ok,
            cert_error_count,
        },
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let n = cfg.n_sites;

    let mut latent = stream(cfg.seed, 1);
    let popularity: Vec<f64> = (0..CATEGORY_COUNT).map(|_| normal(&mut latent)).collect();
    let prefixes: Vec<[u8; 2]> = (0..CATEGORY_COUNT)
        .map(|_| [latent.random_range(11..224), latent.random()])
        .collect();
    let centroids: Vec<Vec<f64>> = (0..CATEGORY_COUNT)
        .map(|_| (0..CONTENT_DIM).map(|_| normal(&mut latent)).collect())
        .collect();

    let mut sites = stream(cfg.seed, 2);
    let truth: Vec<SiteTruth> = (0..n)
        .map(|_| SiteTruth {
            category: sites.random_range(0..CATEGORY_COUNT) as u8,
            tier: sites.random_range(0..3),
        })
        .collect();
    let mut features = FeatureStore::new();
    for (i, t) in truth.iter().enumerate() {
        let c = usize::from(t.category);
        let rec = make_site(&mut sites, t.category, t.tier, &prefixes[c], &centroids[c]);
        features.insert(NodeId(i as u32), rec);
    }

    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); CATEGORY_COUNT];
    for (i, t) in truth.iter().enumerate() {
        by_category[usize::from(t.category)].push(i);
    }
    let mut pairing = stream(cfg.seed, 3);
    let mut pairs = BTreeSet::new();
    let draws = cfg.partners_per_site.div_ceil(2);
    for (i, t) in truth.iter().enumerate() {
        let own = &by_category[usize::from(t.category)];
        for _ in 0..draws {
            let j = if own.len() > 1 && pairing.random::<f64>() < cfg.same_category_partner_prob {
                *own.choose(&mut pairing).expect("non-empty")
            } else {
                pairing.random_range(0..n)
            };
            if j != i {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }

    let lax = [-1.0, 0.0, 1.0];
    let base = logit(cfg.base_reuse);
    let (lo, hi) = cfg.users_per_pair_range;
    let mut counts = stream(cfg.seed, 4);
    let mut stats = Vec::with_capacity(pairs.len());
    for &(u, v) in &pairs {
        let (a, b) = (truth[u], truth[v]);
        let same = if a.category == b.category { 1.0 } else { 0.0 };
        let cat = 1.5 * (popularity[usize::from(a.category)] + popularity[usize::from(b.category)]) + same;
        let gap = f64::from(a.tier.abs_diff(b.tier));
        let sec = lax[usize::from(a.tier)] + lax[usize::from(b.tier)] - 0.5 * gap;
        let z = base + cfg.category_affinity * cat + cfg.security_gap_penalty * sec + cfg.noise * normal(&mut counts);
        let p = 1.0 / (1.0 + (-z).exp());
        let shared = counts.random_range(lo..=hi);
        let reusing = Binomial::new(shared, p)
            .map_err(|e| CoreError::Runtime(e.to_string()))?
            .sample(&mut counts);
        stats.push(AccountStats {
            u: NodeId(u as u32),
            v: NodeId(v as u32),
            shared_users: shared,
            reusing_users: reusing,
        });
    }

    let graph = GraphFile {
        nodes: (0..n).map(|i| (NodeId(i as u32), None)).collect(),
        stats,
    };
    Ok(SynthOutput { graph, features, truth })
}
