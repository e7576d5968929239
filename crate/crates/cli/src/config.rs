use std::path::{Path, PathBuf};

use credgraph::features::SynthConfig;
use credgraph::fl::{derive_seed, Optimizer, TrainConfig};
use credgraph::graph::{AdminId, LabelRule};
use credgraph::model::ModelConfig;
use credgraph::{CoreError, Result};
use serde::{Deserialize, Serialize};

pub const SYNTH_STREAM: u64 = 2;
pub const PARTITION_STREAM: u64 = 3;
pub const SPLIT_STREAM: u64 = 4;
pub const TRAIN_STREAM: u64 = 5;
pub const RANK_STREAM: u64 = 6;

/// File locations. Relative paths are kept as given so that outputs do
/// not depend on the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    pub fn need<'a>(field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| CoreError::config(format!("--{flag} is required")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Valid,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub ks: Vec<usize>,
    /// Edges sampled per node for its ranking list.
    pub candidates: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            candidates: 64,
        }
    }
}

/// Inputs of the closed-form cost command when no checkpoint is given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostInputs {
    pub scalars: Option<u64>,
    pub queries: Option<u64>,
}

/// Everything one command needs, merged from defaults, a JSON file and
/// flags. Serialized in full into every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub label: LabelRule,
    pub clients: usize,
    /// Nodes per admin except the last; `None` splits evenly.
    pub block_size: Option<usize>,
    pub valid_pair: Option<(u32, u32)>,
    pub centralized: bool,
    pub tune_threshold: bool,
    pub eval_on: EvalSplit,
    pub sweep_clients: Vec<usize>,
    pub sweep_seeds: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub rank: RankConfig,
    pub cost: CostInputs,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            label: LabelRule::default(),
            clients: 5,
            block_size: None,
            valid_pair: None,
            centralized: false,
            tune_threshold: false,
            eval_on: EvalSplit::Test,
            sweep_clients: vec![2, 5, 10],
            sweep_seeds: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            rank: RankConfig::default(),
            cost: CostInputs::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CoreError::config(format!("config {}: {e}", path.display())))
    }

    /// Derives per-purpose seeds from the root seed and checks every field.
    pub fn finalize(mut self) -> Result<Self> {
        self.synth.seed = derive_seed(self.seed, SYNTH_STREAM);
        self.train.seed = derive_seed(self.seed, TRAIN_STREAM);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.label.tau_gt > 0.0 && self.label.tau_gt < 1.0) {
            return Err(CoreError::config(format!("tau_gt {} not in (0,1)", self.label.tau_gt)));
        }
        if self.clients == 0 {
            return Err(CoreError::config("--clients must be at least 1"));
        }
        if let Some((a, b)) = self.valid_pair {
            if a == b {
                return Err(CoreError::config("validation admins must differ"));
            }
        }
        if self.rank.ks.is_empty() || self.rank.ks.contains(&0) {
            return Err(CoreError::config("ranking cutoffs must be positive"));
        }
        if self.sweep_clients.is_empty() || self.sweep_clients.contains(&0) || self.sweep_seeds == 0 {
            return Err(CoreError::config("sweep needs positive client counts and seeds"));
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn valid_pair(&self) -> Option<(AdminId, AdminId)> {
        self.valid_pair.map(|(a, b)| (AdminId(a.min(b)), AdminId(a.max(b))))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

pub fn parse_optimizer(s: &str) -> std::result::Result<Optimizer, String> {
    match s {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        other => Err(format!("unknown optimizer {other:?} (adam or sgd)")),
    }
}

pub fn parse_eval_split(s: &str) -> std::result::Result<EvalSplit, String> {
    match s {
        "train" => Ok(EvalSplit::Train),
        "valid" => Ok(EvalSplit::Valid),
        "test" => Ok(EvalSplit::Test),
        other => Err(format!("unknown split {other:?} (train, valid or test)")),
    }
}

pub fn parse_pair(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once(',').ok_or("expected two admin ids as A,B")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}
