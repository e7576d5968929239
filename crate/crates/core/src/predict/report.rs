use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{classification_metrics, mse, risk_scores, Prediction, RankingRow, Truth};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node_id: u32,
    pub risk_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub u: u32,
    pub v: u32,
    pub p_hat: f64,
    pub decision: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<Truth>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct EdgeCsv {
    u: u32,
    v: u32,
    p_hat: f64,
    decision: u8,
    label: Option<u8>,
    reuse_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config: serde_json::Value,
    pub metrics: ReportMetrics,
    pub ranking: Vec<RankingRow>,
    pub nodes: Vec<NodeRow>,
    pub edges: Vec<EdgeRow>,
}

impl RiskReport {
    pub fn new(config: serde_json::Value, predictions: &[Prediction], ranking: Vec<RankingRow>) -> Self {
        let c = classification_metrics(predictions);
        Self {
            config,
            metrics: ReportMetrics {
                precision: c.precision,
                recall: c.recall,
                f1: c.f1,
                mse: mse(predictions),
            },
            ranking,
            nodes: risk_scores(predictions)
                .into_iter()
                .map(|(n, s)| NodeRow {
                    node_id: n.0,
                    risk_score: s,
                })
                .collect(),
            edges: predictions
                .iter()
                .map(|p| EdgeRow {
                    u: p.u.0,
                    v: p.v.0,
                    p_hat: p.p_hat,
                    decision: p.decision,
                    truth: p.truth,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Writes `report.json` plus `metrics.csv`, `ranking.csv`, `nodes.csv`
    /// and `edges.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        write_csv(dir.join("metrics.csv"), std::iter::once(self.metrics))?;
        write_csv(dir.join("ranking.csv"), self.ranking.iter().copied())?;
        write_csv(dir.join("nodes.csv"), self.nodes.iter().copied())?;
        write_csv(
            dir.join("edges.csv"),
            self.edges.iter().map(|e| EdgeCsv {
                u: e.u,
                v: e.v,
                p_hat: e.p_hat,
                decision: u8::from(e.decision),
                label: e.truth.map(|t| u8::from(t.label)),
                reuse_rate: e.truth.map(|t| t.reuse_rate),
            }),
        )?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::CoreError {
    crate::error::CoreError::Runtime(format!("csv: {e}"))
}

#[derive(Clone, Copy, Debug, Serialize)]
struct LossPoint {
    round: usize,
    mean_loss: f64,
    valid_f1: Option<f64>,
}

/// Round-versus-loss table for external plotting.
pub fn write_loss_plot(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (usize, f64, Option<f64>)>,
) -> Result<()> {
    write_csv(
        path,
        rows.into_iter().map(|(round, mean_loss, valid_f1)| LossPoint {
            round,
            mean_loss,
            valid_f1,
        }),
    )
}
