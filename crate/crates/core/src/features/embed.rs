//! Learned embedders for the category, URL and security modalities.

use std::sync::Arc;

use ndgrad::{ParamSet, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{char_ids, CATEGORY_COUNT, PAD, SECURITY_DIM, VOCAB_SIZE};
use crate::error::{CoreError, Result};
use crate::init::{glorot_uniform, ones, zeros};

fn slot(params: &ParamSet, name: &str) -> Result<usize> {
    params
        .slot(name)
        .ok_or_else(|| CoreError::config(format!("parameter {name} missing")))
}

/// Lookup table with one row per category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryEmbed {
    pub table: usize,
}

impl CategoryEmbed {
    pub const NAME: &'static str = "emb.category.table";

    pub fn register(dim: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let table = params.push(Self::NAME, glorot_uniform(rng, CATEGORY_COUNT, dim), true)?;
        Ok(Self { table })
    }

    pub fn locate(params: &ParamSet) -> Result<Self> {
        Ok(Self {
            table: slot(params, Self::NAME)?,
        })
    }

    pub fn embed(&self, tape: &mut Tape, vars: &[Var], ids: Arc<[usize]>) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&c| c >= CATEGORY_COUNT) {
            return Err(CoreError::data(format!("category {bad} outside 0..{CATEGORY_COUNT}")));
        }
        Ok(tape.gather_rows(vars[self.table], ids)?)
    }
}

/// Character ids of a batch of URLs laid out by time step. Sequences that
/// have ended read the padding id and are masked out of the state update.
#[derive(Clone, Debug, PartialEq)]
pub struct UrlBatch {
    pub n: usize,
    pub steps: Vec<Arc<[usize]>>,
    /// `[n x 1]` with 1 for rows still running; `None` when every row is.
    pub masks: Vec<Option<Tensor>>,
}

impl UrlBatch {
    pub fn new<S: AsRef<str>>(urls: &[S]) -> Result<Self> {
        let ids: Vec<Vec<usize>> = urls.iter().map(|u| char_ids(u.as_ref())).collect::<Result<_>>()?;
        Ok(Self::from_ids(&ids))
    }

    pub fn from_ids(ids: &[Vec<usize>]) -> Self {
        let n = ids.len();
        let longest = ids.iter().map(Vec::len).max().unwrap_or(0);
        let mut steps = Vec::with_capacity(longest);
        let mut masks = Vec::with_capacity(longest);
        for t in 0..longest {
            steps.push(ids.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect());
            if ids.iter().all(|s| s.len() > t) {
                masks.push(None);
            } else {
                let m = ids.iter().map(|s| if s.len() > t { 1.0 } else { 0.0 }).collect();
                masks.push(Some(Tensor::matrix(n, 1, m).expect("finite")));
            }
        }
        Self { n, steps, masks }
    }
}

/// Single-layer LSTM over character embeddings; the final hidden state is
/// the URL vector. Gates are packed as `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UrlEncoder {
    pub chars: usize,
    pub w_x: usize,
    pub w_h: usize,
    pub bias: usize,
    pub hidden: usize,
}

impl UrlEncoder {
    pub fn register(char_dim: usize, hidden: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        params.push("emb.url.chars", glorot_uniform(rng, VOCAB_SIZE, char_dim), true)?;
        params.push("emb.url.W_x", glorot_uniform(rng, char_dim, 4 * hidden), true)?;
        params.push("emb.url.W_h", glorot_uniform(rng, hidden, 4 * hidden), true)?;
        params.push("emb.url.bias", zeros(1, 4 * hidden), true)?;
        Self::locate(params)
    }

    pub fn locate(params: &ParamSet) -> Result<Self> {
        let w_h = slot(params, "emb.url.W_h")?;
        Ok(Self {
            chars: slot(params, "emb.url.chars")?,
            w_x: slot(params, "emb.url.W_x")?,
            w_h,
            bias: slot(params, "emb.url.bias")?,
            hidden: params.value(w_h).rows(),
        })
    }

    pub fn encode(&self, tape: &mut Tape, vars: &[Var], batch: &UrlBatch) -> Result<Var> {
        let hd = self.hidden;
        if batch.steps.is_empty() {
            return Err(CoreError::data("empty URL"));
        }
        // Projecting the whole vocabulary once turns each step's input
        // product into a row gather.
        let projected = tape.matmul(vars[self.chars], vars[self.w_x])?;
        let mut h = tape.constant(Tensor::zeros(&[batch.n, hd]))?;
        let mut c = tape.constant(Tensor::zeros(&[batch.n, hd]))?;
        for (ids, mask) in batch.steps.iter().zip(&batch.masks) {
            let xin = tape.gather_rows(projected, ids.clone())?;
            let rec = tape.matmul(h, vars[self.w_h])?;
            let gates = tape.add(xin, rec)?;
            let gates = tape.add_row(gates, vars[self.bias])?;
            let i = tape.slice_cols(gates, 0, hd)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(gates, hd, hd)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice_cols(gates, 2 * hd, hd)?;
            let g = tape.tanh(g)?;
            let o = tape.slice_cols(gates, 3 * hd, hd)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(o, tc)?;
            match mask {
                None => {
                    h = h_new;
                    c = c_new;
                }
                Some(m) => {
                    let m = tape.constant(m.clone())?;
                    h = blend(tape, h, h_new, m)?;
                    c = blend(tape, c, c_new, m)?;
                }
            }
        }
        Ok(h)
    }
}

/// `old + mask * (new - old)` row-wise.
fn blend(tape: &mut Tape, old: Var, new: Var, mask: Var) -> Result<Var> {
    let diff = tape.sub(new, old)?;
    let step = tape.mul_col(diff, mask)?;
    Ok(tape.add(old, step)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch statistics observed in a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as folded into the running estimate.
    pub var: Vec<f64>,
}

/// Batch normalization with learned scale and shift. Running statistics
/// are non-trainable entries of the parameter collection.
#[derive(Clone, Debug, PartialEq)]
pub struct SecurityNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl SecurityNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn register(params: &mut ParamSet) -> Result<Self> {
        params.push("emb.security.gamma", ones(1, SECURITY_DIM), true)?;
        params.push("emb.security.beta", zeros(1, SECURITY_DIM), true)?;
        params.push("emb.security.running_mean", zeros(1, SECURITY_DIM), false)?;
        params.push("emb.security.running_var", ones(1, SECURITY_DIM), false)?;
        Self::locate(params)
    }

    pub fn locate(params: &ParamSet) -> Result<Self> {
        Ok(Self {
            gamma: slot(params, "emb.security.gamma")?,
            beta: slot(params, "emb.security.beta")?,
            running_mean: slot(params, "emb.security.running_mean")?,
            running_var: slot(params, "emb.security.running_var")?,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    pub fn embed(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        params: &ParamSet,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        if x.cols() != SECURITY_DIM {
            return Err(CoreError::data(format!(
                "security batch has {} columns, expected {SECURITY_DIM}",
                x.cols()
            )));
        }
        let (normed, stats) = match mode {
            Mode::Train => {
                let xv = tape.constant(x.clone())?;
                let (xhat, mean, var) = tape.batch_norm(xv, self.eps)?;
                let m = x.rows() as f64;
                let var = var.iter().map(|v| v * m / (m - 1.0)).collect();
                (xhat, Some(BatchStats { mean, var }))
            }
            Mode::Infer => {
                let rm = params.value(self.running_mean).data();
                let rv = params.value(self.running_var).data();
                let n = SECURITY_DIM;
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(n) {
                    for j in 0..n {
                        row[j] = (row[j] - rm[j]) / (rv[j] + self.eps).sqrt();
                    }
                }
                (tape.constant(Tensor::matrix(x.rows(), n, out)?)?, None)
            }
        };
        let scaled = tape.mul_row(normed, vars[self.gamma])?;
        Ok((tape.add_row(scaled, vars[self.beta])?, stats))
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&self, params: &mut ParamSet, stats: &BatchStats) {
        let mom = self.momentum;
        for (slot, batch) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var)] {
            for (r, &b) in params.value_mut(slot).data_mut().iter_mut().zip(batch) {
                *r = (1.0 - mom) * *r + mom * b;
            }
        }
    }
}
