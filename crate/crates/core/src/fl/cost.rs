use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

fn overflow() -> CoreError {
    CoreError::Runtime("communication cost overflows 64 bits".into())
}

fn product(xs: &[u64]) -> Result<u64> {
    xs.iter()
        .try_fold(1u64, |acc, &x| acc.checked_mul(x))
        .ok_or_else(overflow)
}

/// Training traffic `2 b |w| K T`: every client downloads and uploads the
/// whole parameter collection once per round.
pub fn cost_train(b: u64, scalars: u64, k: u64, rounds: u64) -> Result<u64> {
    product(&[2, b, scalars, k, rounds])
}

/// Inference traffic `delta b d |Q|` for exchanging node vectors.
pub fn cost_infer(delta: u64, b: u64, d: u64, queries: u64) -> Result<u64> {
    product(&[delta, b, d, queries])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCost {
    pub upload: u64,
    pub download: u64,
}

/// Running byte counters for one training run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub bytes_per_scalar: u64,
    pub delta: u64,
    pub scalars: u64,
    pub clients: u64,
    pub rounds: Vec<RoundCost>,
    pub uploaded: u64,
    pub downloaded: u64,
    pub embedding_bytes: u64,
}

impl CostLedger {
    pub fn new(bytes_per_scalar: u64, delta: u64, scalars: u64, clients: u64) -> Self {
        Self {
            bytes_per_scalar,
            delta,
            scalars,
            clients,
            rounds: Vec::new(),
            uploaded: 0,
            downloaded: 0,
            embedding_bytes: 0,
        }
    }

    /// Counts one client's download of the global model.
    pub fn record_download(&mut self) -> Result<()> {
        let bytes = product(&[self.bytes_per_scalar, self.scalars])?;
        self.downloaded = self.downloaded.checked_add(bytes).ok_or_else(overflow)?;
        self.current()?.download += bytes;
        Ok(())
    }

    /// Counts one client's upload of its local model.
    pub fn record_upload(&mut self) -> Result<()> {
        let bytes = product(&[self.bytes_per_scalar, self.scalars])?;
        self.uploaded = self.uploaded.checked_add(bytes).ok_or_else(overflow)?;
        self.current()?.upload += bytes;
        Ok(())
    }

    pub fn begin_round(&mut self) {
        self.rounds.push(RoundCost { upload: 0, download: 0 });
    }

    fn current(&mut self) -> Result<&mut RoundCost> {
        self.rounds
            .last_mut()
            .ok_or_else(|| CoreError::Runtime("traffic recorded outside a round".into()))
    }

    /// Counts node vectors of width `d` exchanged for `queries` cross-admin pairs.
    pub fn record_inference(&mut self, d: u64, queries: u64) -> Result<u64> {
        let bytes = cost_infer(self.delta, self.bytes_per_scalar, d, queries)?;
        self.embedding_bytes = self.embedding_bytes.checked_add(bytes).ok_or_else(overflow)?;
        Ok(bytes)
    }

    pub fn training_total(&self) -> u64 {
        self.uploaded + self.downloaded
    }
}
