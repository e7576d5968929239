use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use credgraph::fl::Optimizer;
use credgraph::Result;

use crate::config::{parse_eval_split, parse_optimizer, parse_pair, EvalSplit, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "credgraph",
    version,
    about = "Federated credential-stuffing risk prediction over password-reuse graphs",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic graph and feature snapshot into --out
    Generate,
    /// Validate a feature snapshot and write a canonical copy into --out
    Ingest,
    /// Assign nodes to --clients admins and write the partitioned graph and split into --out
    Partition,
    /// Train (federated, or --centralized) and write checkpoints and logs into --out
    Train,
    /// Score an edge split with a checkpoint and write a report into --out
    Evaluate,
    /// Ranking metrics per node for a checkpoint, written into --out
    Rank,
    /// Full report: classification, risk scores and ranking
    Report,
    /// Closed-form communication costs, optionally reconciled against --log
    Cost,
    /// Train and test once per federation size in --sweep-clients
    Sweep,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub split: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
    /// Training log to reconcile costs against
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub tau_gt: Option<f64>,
    #[arg(long, global = true)]
    pub min_shared: Option<u64>,
    #[arg(long, global = true)]
    pub tau_pred: Option<f64>,
    /// Pick the decision threshold maximizing validation F1
    #[arg(long, global = true)]
    pub tune_threshold: bool,

    #[arg(long = "clients", global = true)]
    pub clients: Option<usize>,
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
    /// Admin pair whose cross edges form the validation set, as A,B
    #[arg(long, global = true, value_parser = parse_pair)]
    pub valid_pair: Option<(u32, u32)>,

    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    #[arg(long, global = true)]
    pub local_steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub max_lr: Option<f64>,
    #[arg(long, global = true)]
    pub warmup: Option<f64>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true, value_parser = parse_optimizer)]
    pub optimizer: Option<Optimizer>,
    #[arg(long, global = true)]
    pub weighted_avg: bool,
    #[arg(long, global = true)]
    pub centralized: bool,
    #[arg(long, global = true)]
    pub bytes_per_scalar: Option<u64>,
    #[arg(long, global = true)]
    pub delta: Option<u64>,

    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub category_dim: Option<usize>,
    #[arg(long, global = true)]
    pub url_dim: Option<usize>,
    #[arg(long, global = true)]
    pub char_dim: Option<usize>,
    #[arg(long, global = true)]
    pub mean_pool: bool,
    #[arg(long, global = true)]
    pub no_modality_attn: bool,

    #[arg(long, global = true)]
    pub sites: Option<usize>,

    /// Which split evaluate, rank and report score
    #[arg(long, global = true, value_parser = parse_eval_split)]
    pub on: Option<EvalSplit>,
    /// Ranking cutoffs, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub candidates: Option<usize>,

    /// Federation sizes for sweep, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_clients: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub sweep_seeds: Option<usize>,

    /// Cost inputs when no checkpoint or log is given
    #[arg(long, global = true)]
    pub scalars: Option<u64>,
    #[arg(long, global = true)]
    pub queries: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Flags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        let p = &mut c.paths;
        for (slot, v) in [
            (&mut p.graph, &self.graph),
            (&mut p.snapshot, &self.snapshot),
            (&mut p.split, &self.split),
            (&mut p.checkpoint, &self.checkpoint),
            (&mut p.resume, &self.resume),
            (&mut p.log, &self.log),
            (&mut p.out, &self.out),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        set(&mut c.label.tau_gt, self.tau_gt);
        set(&mut c.label.min_shared, self.min_shared);
        set(&mut c.train.tau_pred, self.tau_pred);
        c.tune_threshold |= self.tune_threshold;
        set(&mut c.clients, self.clients);
        if self.block_size.is_some() {
            c.block_size = self.block_size;
        }
        if self.valid_pair.is_some() {
            c.valid_pair = self.valid_pair;
        }
        set(&mut c.train.rounds, self.rounds);
        if self.local_steps.is_some() {
            c.train.local_steps = self.local_steps;
        }
        set(&mut c.train.batch, self.batch);
        set(&mut c.train.max_lr, self.max_lr);
        set(&mut c.train.warmup, self.warmup);
        set(&mut c.train.patience, self.patience);
        set(&mut c.train.optimizer, self.optimizer);
        c.train.weighted_avg |= self.weighted_avg;
        c.centralized |= self.centralized;
        set(&mut c.train.bytes_per_scalar, self.bytes_per_scalar);
        set(&mut c.train.delta, self.delta);
        set(&mut c.model.d, self.d);
        set(&mut c.model.layers, self.layers);
        set(&mut c.model.category_dim, self.category_dim);
        set(&mut c.model.url_dim, self.url_dim);
        set(&mut c.model.char_dim, self.char_dim);
        c.model.mean_pool |= self.mean_pool;
        c.model.modality_attn &= !self.no_modality_attn;
        set(&mut c.synth.n_sites, self.sites);
        set(&mut c.eval_on, self.on);
        set(&mut c.rank.ks, self.ks.clone());
        set(&mut c.rank.candidates, self.candidates);
        set(&mut c.sweep_clients, self.sweep_clients.clone());
        set(&mut c.sweep_seeds, self.sweep_seeds);
        if self.scalars.is_some() {
            c.cost.scalars = self.scalars;
        }
        if self.queries.is_some() {
            c.cost.queries = self.queries;
        }
        c.synth.admins = c.clients;
        c.finalize()
    }
}
