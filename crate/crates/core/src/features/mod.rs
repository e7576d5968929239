//! Raw website attributes and their fixed (non-learned) encodings.

mod embed;
mod snapshot;
mod synth;

pub use embed::{BatchStats, CategoryEmbed, Mode, SecurityNorm, UrlBatch, UrlEncoder};
pub use snapshot::{ingest_snapshot, parse_snapshot, write_snapshot, SnapshotRecord};
pub use synth::{synth_generate, SynthConfig, SynthOutput};

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::NodeId;

pub const IP_DIM: usize = 32;
pub const CATEGORY_COUNT: usize = 20;
pub const CONTENT_DIM: usize = 768;
pub const SECURITY_DIM: usize = 6;
pub const MAX_URL_LEN: usize = 256;

/// Padding index, followed by the shared unknown-character index.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Padding, unknown, and the 95 printable ASCII characters.
pub const VOCAB_SIZE: usize = 97;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SecurityPosture {
    pub software_count: u32,
    pub avg_cves_per_software: f64,
    pub avg_cvss: f64,
    pub max_cvss: f64,
    pub https_ok: bool,
    pub cert_error_count: u32,
}

impl SecurityPosture {
    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| (0.0..=10.0).contains(&x);
        if !in_range(self.avg_cvss) || !in_range(self.max_cvss) {
            return Err(CoreError::data(format!(
                "cvss values ({}, {}) outside [0, 10]",
                self.avg_cvss, self.max_cvss
            )));
        }
        if self.max_cvss < self.avg_cvss {
            return Err(CoreError::data(format!(
                "max cvss {} below average {}",
                self.max_cvss, self.avg_cvss
            )));
        }
        if !(self.avg_cves_per_software.is_finite() && self.avg_cves_per_software >= 0.0) {
            return Err(CoreError::data("average CVE count must be finite and non-negative"));
        }
        Ok(())
    }

    /// Feature order: software count, CVEs per software, average CVSS,
    /// maximum CVSS, HTTPS validity, certificate errors.
    pub fn to_vector(&self) -> [f64; SECURITY_DIM] {
        [
            f64::from(self.software_count),
            self.avg_cves_per_software,
            self.avg_cvss,
            self.max_cvss,
            if self.https_ok { 1.0 } else { 0.0 },
            f64::from(self.cert_error_count),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub ip: Ipv4Addr,
    pub category: u8,
    pub content: Vec<f64>,
    pub url: String,
    pub security: SecurityPosture,
}

impl FeatureRecord {
    pub fn validate(&self) -> Result<()> {
        if usize::from(self.category) >= CATEGORY_COUNT {
            return Err(CoreError::data(format!(
                "category {} outside 0..{CATEGORY_COUNT}",
                self.category
            )));
        }
        embed_content(&self.content)?;
        char_ids(&self.url)?;
        self.security.validate()
    }
}

/// Features keyed by node id.
pub type FeatureStore = BTreeMap<NodeId, FeatureRecord>;

/// Big-endian bits of the address, most significant first.
pub fn embed_ip(ip: Ipv4Addr) -> [f64; IP_DIM] {
    let bits = u32::from(ip);
    let mut out = [0.0; IP_DIM];
    for (i, o) in out.iter_mut().enumerate() {
        *o = f64::from((bits >> (31 - i)) & 1);
    }
    out
}

pub fn parse_ipv4(text: &str) -> Result<Ipv4Addr> {
    if text.contains(':') {
        return Err(CoreError::data(format!("IPv6 address {text:?} is not supported")));
    }
    text.parse()
        .map_err(|_| CoreError::data(format!("malformed IPv4 address {text:?}")))
}

pub fn check_category(cat: usize) -> Result<usize> {
    if cat < CATEGORY_COUNT {
        Ok(cat)
    } else {
        Err(CoreError::data(format!("category {cat} outside 0..{CATEGORY_COUNT}")))
    }
}

/// Content vectors are used as given.
pub fn embed_content(content: &[f64]) -> Result<&[f64]> {
    if content.len() != CONTENT_DIM {
        return Err(CoreError::data(format!(
            "content vector has {} dimensions, expected {CONTENT_DIM}",
            content.len()
        )));
    }
    if content.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::data("content vector has non-finite values"));
    }
    Ok(content)
}

pub fn char_id(c: char) -> usize {
    match c {
        ' '..='~' => c as usize - 32 + 2,
        _ => UNK,
    }
}

/// Vocabulary indices of the first `MAX_URL_LEN` characters.
pub fn char_ids(url: &str) -> Result<Vec<usize>> {
    if url.is_empty() {
        return Err(CoreError::data("empty URL"));
    }
    Ok(url.chars().take(MAX_URL_LEN).map(char_id).collect())
}
