use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_ipv4, FeatureRecord, SecurityPosture};
use crate::error::{CoreError, Result};
use crate::graph::NodeId;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SecurityLine {
    software_count: Option<u32>,
    avg_cves: Option<f64>,
    avg_cvss: Option<f64>,
    max_cvss: Option<f64>,
    https_ok: Option<u8>,
    cert_errors: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotLine {
    site_id: u32,
    ip: String,
    category: usize,
    url: String,
    content_vec: Vec<f64>,
    #[serde(default)]
    security: Option<SecurityLine>,
}

/// Optional first line carrying the settings that produced the file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    #[allow(dead_code)]
    config: serde_json::Value,
}

/// One ingested site, with the security fields that were absent and therefore defaulted.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRecord {
    pub site_id: NodeId,
    pub features: FeatureRecord,
    pub defaulted: Vec<&'static str>,
}

fn convert(line: SnapshotLine) -> Result<SnapshotRecord> {
    let sec = line.security.unwrap_or_default();
    let mut defaulted = Vec::new();
    let mut take = |name: &'static str, present: bool| {
        if !present {
            defaulted.push(name);
        }
    };
    take("software_count", sec.software_count.is_some());
    take("avg_cves", sec.avg_cves.is_some());
    take("avg_cvss", sec.avg_cvss.is_some());
    take("max_cvss", sec.max_cvss.is_some());
    take("https_ok", sec.https_ok.is_some());
    take("cert_errors", sec.cert_errors.is_some());
    let https_ok = match sec.https_ok.unwrap_or(0) {
        0 => false,
        1 => true,
        other => return Err(CoreError::data(format!("https_ok must be 0 or 1, got {other}"))),
    };
    let avg_cvss = sec.avg_cvss.unwrap_or(0.0);
    let security = SecurityPosture {
        software_count: sec.software_count.unwrap_or(0),
        avg_cves_per_software: sec.avg_cves.unwrap_or(0.0),
        avg_cvss,
        // an absent maximum cannot sit below a reported average
        max_cvss: sec.max_cvss.unwrap_or(avg_cvss),
        https_ok,
        cert_error_count: sec.cert_errors.unwrap_or(0),
    };
    let category =
        u8::try_from(line.category).map_err(|_| CoreError::data(format!("category {} out of range", line.category)))?;
    let features = FeatureRecord {
        ip: parse_ipv4(&line.ip)?,
        category,
        content: line.content_vec,
        url: line.url,
        security,
    };
    features.validate()?;
    Ok(SnapshotRecord {
        site_id: NodeId(line.site_id),
        features,
        defaulted,
    })
}

/// Parses snapshot lines; `origin` names the source in error messages.
pub fn parse_snapshot(reader: impl BufRead, origin: &str) -> Result<Vec<SnapshotRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| CoreError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if out.is_empty() && serde_json::from_str::<HeaderLine>(&line).is_ok() {
            continue;
        }
        let parsed: SnapshotLine = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let rec = convert(parsed).map_err(|e| fail(e.to_string()))?;
        if !seen.insert(rec.site_id) {
            return Err(fail(format!("duplicate site id {}", rec.site_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest_snapshot(path: impl AsRef<Path>) -> Result<Vec<SnapshotRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    parse_snapshot(reader, &path.display().to_string())
}

pub fn write_snapshot<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = (NodeId, &'a FeatureRecord)>,
    header: Option<&serde_json::Value>,
) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if let Some(config) = header {
        serde_json::to_writer(&mut out, &serde_json::json!({ "config": config }))?;
        out.write_all(b"\n")?;
    }
    for (id, f) in records {
        let s = &f.security;
        let line = SnapshotLine {
            site_id: id.0,
            ip: f.ip.to_string(),
            category: usize::from(f.category),
            url: f.url.clone(),
            content_vec: f.content.clone(),
            security: Some(SecurityLine {
                software_count: Some(s.software_count),
                avg_cves: Some(s.avg_cves_per_software),
                avg_cvss: Some(s.avg_cvss),
                max_cvss: Some(s.max_cvss),
                https_ok: Some(u8::from(s.https_ok)),
                cert_errors: Some(s.cert_error_count),
            }),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
