//! Simulated federation: local training on each admin's graph, parameter
//! averaging at a server, round-indexed learning rate, early stopping and
//! traffic accounting.

mod cost;

pub use cost::{cost_infer, cost_train, CostLedger, RoundCost};

use std::sync::Arc;

use ndgrad::{sgd_step, Adam, AdamState, OneCycleSchedule, ParamSet, Tape};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{FeatureStore, Mode};
use crate::graph::{
    extract_subgraph, AdminId, EdgeScope, NodeId, Partitioned, PasswordReuseGraph, ReuseEdge, SplitPlan, Subgraph,
};
use crate::model::{Model, NodeInputs};
use crate::predict::{classification_metrics, classify, Prediction, Truth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    /// Batches per client per round; `None` means one pass over the
    /// client's training edges.
    pub local_steps: Option<usize>,
    pub batch: usize,
    pub max_lr: f64,
    pub warmup: f64,
    pub patience: usize,
    pub tau_pred: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub weighted_avg: bool,
    pub bytes_per_scalar: u64,
    pub delta: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            local_steps: None,
            batch: 1024,
            max_lr: 1e-3,
            warmup: 0.1,
            patience: 40,
            tau_pred: 0.5,
            seed: 0,
            optimizer: Optimizer::Adam,
            weighted_avg: false,
            bytes_per_scalar: 8,
            delta: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(CoreError::config("batch size must be positive"));
        }
        if self.local_steps == Some(0) {
            return Err(CoreError::config("local steps must be positive"));
        }
        if !(self.tau_pred > 0.0 && self.tau_pred < 1.0) {
            return Err(CoreError::config(format!("tau_pred {} not in (0,1)", self.tau_pred)));
        }
        if !matches!(self.delta, 1 | 2) {
            return Err(CoreError::config("delta must be 1 or 2"));
        }
        if self.bytes_per_scalar == 0 {
            return Err(CoreError::config("bytes per scalar must be positive"));
        }
        if self.rounds > 0 {
            OneCycleSchedule::new(self.max_lr, self.rounds, self.warmup)?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Option<OneCycleSchedule>> {
        if self.rounds == 0 {
            return Ok(None);
        }
        Ok(Some(OneCycleSchedule::new(self.max_lr, self.rounds, self.warmup)?))
    }
}

/// Independent seed for one purpose under a root seed.
pub fn derive_seed(root: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(purpose);
    rng.next_u64()
}

pub const INIT_STREAM: u64 = 1;
const CLIENT_STREAM: u64 = 1000;

/// Shared, read-only inputs of local training.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub model: &'a Model,
    pub store: &'a FeatureStore,
    pub cfg: &'a TrainConfig,
}

/// One administrator: its graph, training edges, model copy and optimizer.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub admin: AdminId,
    pub graph: PasswordReuseGraph,
    pub train: Vec<ReuseEdge>,
    pub params: ParamSet,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl ClientState {
    pub fn new(
        admin: AdminId,
        graph: PasswordReuseGraph,
        train: Vec<ReuseEdge>,
        params: ParamSet,
        seed: u64,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(CoreError::data(format!("admin {} has no training edges", admin.0)));
        }
        for e in &train {
            match graph.edge(e.u, e.v) {
                Some(g) if g.scope == EdgeScope::Local => {}
                _ => {
                    return Err(CoreError::data(format!(
                        "edge ({}, {}) is not a local edge of admin {}",
                        e.u, e.v, admin.0
                    )))
                }
            }
        }
        let n = train.len();
        Ok(Self {
            admin,
            graph,
            train,
            adam: AdamState::new(&params),
            params,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, CLIENT_STREAM + u64::from(admin.0))),
            order: (0..n).collect(),
            cursor: n,
        })
    }

    fn next_batch(&mut self, size: usize) -> Vec<ReuseEdge> {
        let n = self.train.len();
        if self.cursor >= n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(n);
        let batch = self.order[self.cursor..end].iter().map(|&i| self.train[i]).collect();
        self.cursor = end;
        batch
    }

    /// Forward, backward and one optimizer step on `batch`; returns the
    /// batch loss before `loss_scale` is applied.
    pub fn local_step_scaled(
        &mut self,
        ctx: TrainContext<'_>,
        batch: &[ReuseEdge],
        lr: f64,
        loss_scale: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(CoreError::data("empty training batch"));
        }
        let pairs: Vec<(NodeId, NodeId)> = batch.iter().map(|e| (e.u, e.v)).collect();
        let sub = extract_subgraph(&self.graph, &pairs, ctx.model.cfg.layers)?;
        let inputs = NodeInputs::build(&sub.nodes, ctx.store)?;
        let mut tape = Tape::new();
        let fwd = ctx.model.forward(
            &mut tape,
            &self.params,
            &inputs,
            &sub.messages,
            sub.hops,
            &sub.targets,
            Mode::Train,
        )?;
        let targets: Arc<[f64]> = batch.iter().map(ReuseEdge::label).collect();
        let loss = tape.bce_mean(fwd.probs, targets)?;
        let value = tape.value(loss).item()?;
        let objective = if loss_scale == 1.0 {
            loss
        } else {
            tape.scale(loss, loss_scale)?
        };
        let grads = tape.backward(objective)?.dense(&self.params.shapes());
        match ctx.cfg.optimizer {
            Optimizer::Adam => Adam::default().step(&mut self.params, &grads, &mut self.adam, lr)?,
            Optimizer::Sgd => sgd_step(&mut self.params, &grads, lr)?,
        }
        if let Some(stats) = &fwd.bn {
            ctx.model.security.update_running(&mut self.params, stats);
        }
        Ok(value)
    }

    pub fn local_step(&mut self, ctx: TrainContext<'_>, batch: &[ReuseEdge], lr: f64) -> Result<f64> {
        self.local_step_scaled(ctx, batch, lr, 1.0)
    }

    /// All local steps of one round; returns the mean batch loss.
    pub fn local_round(&mut self, ctx: TrainContext<'_>, lr: f64) -> Result<f64> {
        let steps = ctx
            .cfg
            .local_steps
            .unwrap_or_else(|| self.train.len().div_ceil(ctx.cfg.batch));
        if ctx.cfg.local_steps.is_none() {
            // a full pass always starts from a fresh shuffle
            self.cursor = self.train.len();
        }
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = self.next_batch(ctx.cfg.batch);
            total += self.local_step(ctx, &batch, lr)?;
        }
        Ok(total / steps as f64)
    }
}

/// Elementwise mean of compatible parameter collections, accumulated in
/// the given order. `weights` switches to a weighted mean.
pub fn fedavg(sets: &[&ParamSet], weights: Option<&[f64]>) -> Result<ParamSet> {
    let Some((first, rest)) = sets.split_first() else {
        return Err(CoreError::config("nothing to average"));
    };
    if rest.iter().any(|s| !s.compatible_with(first)) {
        return Err(CoreError::config("client parameter collections are incompatible"));
    }
    if let Some(w) = weights {
        if w.len() != sets.len() || w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CoreError::config(
                "averaging weights must be non-negative with a positive sum",
            ));
        }
    }
    let mut out = (*first).clone();
    for slot in 0..out.len() {
        let acc = out.value_mut(slot).data_mut();
        if let Some(w) = weights {
            acc.iter_mut().for_each(|x| *x *= w[0]);
        }
        for (k, s) in rest.iter().enumerate() {
            let src = s.value(slot).data();
            match weights {
                None => acc.iter_mut().zip(src).for_each(|(a, &b)| *a += b),
                Some(w) => acc.iter_mut().zip(src).for_each(|(a, &b)| *a += w[k + 1] * b),
            }
        }
        let denom = match weights {
            None => sets.len() as f64,
            Some(w) => w.iter().sum(),
        };
        acc.iter_mut().for_each(|x| *x /= denom);
    }
    Ok(out)
}

/// Precomputed computation graph and inputs for scoring a fixed edge set.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub edges: Vec<ReuseEdge>,
    sub: Subgraph,
    inputs: NodeInputs,
}

impl EvalSet {
    pub fn new(graph: &PasswordReuseGraph, store: &FeatureStore, edges: Vec<ReuseEdge>, hops: usize) -> Result<Self> {
        let pairs: Vec<(NodeId, NodeId)> = edges.iter().map(|e| (e.u, e.v)).collect();
        let sub = extract_subgraph(graph, &pairs, hops)?;
        let inputs = NodeInputs::build(&sub.nodes, store)?;
        Ok(Self { edges, sub, inputs })
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Inference-mode probabilities with decisions at `tau`.
    pub fn predict(&self, model: &Model, params: &ParamSet, tau: f64) -> Result<Vec<Prediction>> {
        if self.edges.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let fwd = model.forward(
            &mut tape,
            params,
            &self.inputs,
            &self.sub.messages,
            self.sub.hops,
            &self.sub.targets,
            Mode::Infer,
        )?;
        let probs = tape.value(fwd.probs).data();
        Ok(self
            .edges
            .iter()
            .zip(probs)
            .map(|(e, &p)| Prediction {
                edge: e.id,
                u: e.u,
                v: e.v,
                p_hat: p,
                decision: classify(p, tau),
                truth: Some(Truth {
                    label: e.positive,
                    reuse_rate: e.reuse_rate,
                }),
            })
            .collect())
    }

    /// Node vectors of every node in the computation graph, by node id.
    pub fn embeddings(&self, model: &Model, params: &ParamSet) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let mut tape = Tape::new();
        let fwd = model.forward(
            &mut tape,
            params,
            &self.inputs,
            &self.sub.messages,
            self.sub.hops,
            &self.sub.targets,
            Mode::Infer,
        )?;
        let h = tape.value(fwd.reps.fused);
        Ok(self
            .sub
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, h.row(i).to_vec()))
            .collect())
    }
}

/// Looks up edges of a split in the partitioned graph.
pub fn edges_by_id(parts: &Partitioned, ids: &[crate::graph::EdgeId]) -> Result<Vec<ReuseEdge>> {
    ids.iter()
        .map(|&id| {
            parts
                .graph
                .edge_by_id(id)
                .copied()
                .ok_or_else(|| CoreError::data(format!("split refers to unknown edge {}", id.0)))
        })
        .collect()
}

/// One client per admin holding that admin's local edges; with
/// `centralized`, a single client holding the union of all local graphs.
pub fn build_clients(
    parts: &Partitioned,
    split: &SplitPlan,
    params: &ParamSet,
    seed: u64,
    centralized: bool,
) -> Result<Vec<ClientState>> {
    let train = edges_by_id(parts, &split.train)?;
    if centralized {
        return Ok(vec![ClientState::new(
            AdminId(0),
            parts.graph.clone(),
            train,
            params.clone(),
            seed,
        )?]);
    }
    parts
        .locals
        .iter()
        .enumerate()
        .map(|(k, local)| {
            let admin = AdminId(k as u32);
            let mine = train
                .iter()
                .filter(|e| parts.graph.admin_of(e.u) == Some(admin))
                .copied()
                .collect();
            ClientState::new(admin, local.clone(), mine, params.clone(), seed)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub per_client_loss: Vec<f64>,
    pub valid_f1: Option<f64>,
    pub cum_upload_bytes: u64,
    pub cum_download_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub lr: f64,
    pub per_client_loss: Vec<f64>,
    pub mean_loss: f64,
}

/// Server state: the global model, clients, schedule and ledger.
pub struct TrainRun<'a> {
    pub ctx: TrainContext<'a>,
    pub global: ParamSet,
    pub clients: Vec<ClientState>,
    pub ledger: CostLedger,
    /// Index of the next round to run.
    pub round: usize,
    pub federated: bool,
    schedule: Option<OneCycleSchedule>,
}

impl<'a> TrainRun<'a> {
    pub fn new(ctx: TrainContext<'a>, global: ParamSet, clients: Vec<ClientState>, federated: bool) -> Result<Self> {
        ctx.cfg.validate()?;
        if clients.is_empty() {
            return Err(CoreError::config("no clients"));
        }
        if !federated && clients.len() != 1 {
            return Err(CoreError::config("centralized training takes exactly one client"));
        }
        if clients.iter().any(|c| !c.params.compatible_with(&global)) {
            return Err(CoreError::config("client parameters do not match the global model"));
        }
        let ledger = CostLedger::new(
            ctx.cfg.bytes_per_scalar,
            ctx.cfg.delta,
            global.total_scalars() as u64,
            clients.len() as u64,
        );
        Ok(Self {
            ctx,
            global,
            clients,
            ledger,
            round: 0,
            federated,
            schedule: ctx.cfg.schedule()?,
        })
    }

    pub fn lr(&self, round: usize) -> Result<f64> {
        match &self.schedule {
            Some(s) => Ok(s.lr(round)?),
            None => Err(CoreError::config("no rounds scheduled")),
        }
    }

    /// One round at the scheduled rate. Federated rounds download the
    /// global model to every client, train, upload and average; the
    /// centralized path trains its single client in place.
    pub fn run_round(&mut self) -> Result<RoundOutcome> {
        let lr = self.lr(self.round)?;
        let ctx = self.ctx;
        let mut per_client_loss = Vec::with_capacity(self.clients.len());
        if self.federated {
            self.ledger.begin_round();
            for c in &mut self.clients {
                c.params = self.global.clone();
                self.ledger.record_download()?;
                let loss = c
                    .local_round(ctx, lr)
                    .map_err(|e| CoreError::Runtime(format!("client {} failed: {e}", c.admin.0)))?;
                per_client_loss.push(loss);
                self.ledger.record_upload()?;
            }
            let mut order: Vec<&ClientState> = self.clients.iter().collect();
            order.sort_by_key(|c| c.admin);
            let sets: Vec<&ParamSet> = order.iter().map(|c| &c.params).collect();
            let weights: Option<Vec<f64>> = ctx
                .cfg
                .weighted_avg
                .then(|| order.iter().map(|c| c.train.len() as f64).collect());
            self.global = fedavg(&sets, weights.as_deref())?;
        } else {
            let c = &mut self.clients[0];
            per_client_loss.push(c.local_round(ctx, lr)?);
            self.global = c.params.clone();
        }
        self.round += 1;
        let mean_loss = per_client_loss.iter().sum::<f64>() / per_client_loss.len() as f64;
        Ok(RoundOutcome {
            lr,
            per_client_loss,
            mean_loss,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best: ParamSet,
    /// Round whose global model is `best`; `None` if no round ran.
    pub best_round: Option<usize>,
    pub best_f1: Option<f64>,
    pub last: ParamSet,
    pub log: Vec<LogRow>,
    pub ledger: CostLedger,
    pub rounds_run: usize,
}

/// Runs rounds until the schedule ends or validation F1 has not improved
/// for more than `patience` rounds; keeps the best global model.
pub fn train(mut run: TrainRun<'_>, valid: Option<&EvalSet>) -> Result<TrainResult> {
    let total = run.ctx.cfg.rounds;
    let mut log = Vec::new();
    let mut best = run.global.clone();
    let mut best_round = None;
    let mut best_f1: Option<f64> = None;
    let mut stale = 0usize;
    let mut rounds_run = 0;
    while run.round < total {
        let round = run.round;
        let out = run.run_round()?;
        rounds_run += 1;
        let valid_f1 = match valid {
            Some(v) if !v.is_empty() => {
                let preds = v.predict(run.ctx.model, &run.global, run.ctx.cfg.tau_pred)?;
                Some(classification_metrics(&preds).f1)
            }
            _ => None,
        };
        log.push(LogRow {
            round,
            lr: out.lr,
            mean_loss: out.mean_loss,
            per_client_loss: out.per_client_loss,
            valid_f1,
            cum_upload_bytes: run.ledger.uploaded,
            cum_download_bytes: run.ledger.downloaded,
        });
        match valid_f1 {
            Some(f1) => {
                if best_f1.is_none_or(|b| f1 > b) {
                    best_f1 = Some(f1);
                    best = run.global.clone();
                    best_round = Some(round);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > run.ctx.cfg.patience {
                        break;
                    }
                }
            }
            None => {
                best = run.global.clone();
                best_round = Some(round);
            }
        }
    }
    Ok(TrainResult {
        best,
        best_round,
        best_f1,
        last: run.global,
        log,
        ledger: run.ledger,
        rounds_run,
    })
}
