//! The full model: modality embedders, message passing and edge head.

use std::sync::Arc;

use ndgrad::{ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{
    char_ids, embed_content, embed_ip, BatchStats, CategoryEmbed, FeatureStore, Mode, SecurityNorm, UrlBatch,
    UrlEncoder, CONTENT_DIM, IP_DIM, SECURITY_DIM,
};
use crate::gnn::{bind, node_representations, GnnConfig, GnnLayout, NodeReps};
use crate::graph::{Messages, NodeId};
use crate::predict::EdgeHead;

pub const MODALITIES: [&str; 5] = ["location", "category", "content", "url", "security"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub category_dim: usize,
    pub url_dim: usize,
    pub char_dim: usize,
    pub slope: f64,
    pub mean_pool: bool,
    pub modality_attn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            layers: 2,
            category_dim: 256,
            url_dim: 256,
            char_dim: 32,
            slope: 0.2,
            mean_pool: false,
            modality_attn: true,
        }
    }
}

impl ModelConfig {
    pub fn modality_dims(&self) -> [usize; 5] {
        [IP_DIM, self.category_dim, CONTENT_DIM, self.url_dim, SECURITY_DIM]
    }

    pub fn gnn(&self) -> GnnConfig {
        GnnConfig {
            in_dims: self.modality_dims().to_vec(),
            d: self.d,
            layers: self.layers,
            slope: self.slope,
            mean_pool: self.mean_pool,
            modality_attn: self.modality_attn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.category_dim == 0 || self.url_dim == 0 || self.char_dim == 0 {
            return Err(CoreError::config("embedding dimensions must be positive"));
        }
        self.gnn().validate()
    }
}

/// Raw per-node inputs for one computation graph, rows in node order.
#[derive(Clone, Debug)]
pub struct NodeInputs {
    pub n: usize,
    pub ip: Tensor,
    pub category: Arc<[usize]>,
    pub content: Tensor,
    pub urls: UrlBatch,
    pub security: Tensor,
}

impl NodeInputs {
    pub fn build(nodes: &[NodeId], store: &FeatureStore) -> Result<Self> {
        let n = nodes.len();
        let mut ip = Vec::with_capacity(n * IP_DIM);
        let mut category = Vec::with_capacity(n);
        let mut content = Vec::with_capacity(n * CONTENT_DIM);
        let mut urls = Vec::with_capacity(n);
        let mut security = Vec::with_capacity(n * SECURITY_DIM);
        for id in nodes {
            let f = store
                .get(id)
                .ok_or_else(|| CoreError::data(format!("no features for node {id}")))?;
            ip.extend_from_slice(&embed_ip(f.ip));
            category.push(usize::from(f.category));
            content.extend_from_slice(embed_content(&f.content)?);
            urls.push(char_ids(&f.url)?);
            security.extend_from_slice(&f.security.to_vector());
        }
        Ok(Self {
            n,
            ip: Tensor::matrix(n, IP_DIM, ip)?,
            category: category.into(),
            content: Tensor::matrix(n, CONTENT_DIM, content)?,
            urls: UrlBatch::from_ids(&urls),
            security: Tensor::matrix(n, SECURITY_DIM, security)?,
        })
    }
}

/// Slot layout of a full model inside its [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub category: CategoryEmbed,
    pub url: UrlEncoder,
    pub security: SecurityNorm,
    pub gnn: GnnLayout,
    pub head: EdgeHead,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    pub probs: Var,
    pub reps: NodeReps,
    pub bn: Option<BatchStats>,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamSet)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let category = CategoryEmbed::register(cfg.category_dim, &mut params, &mut rng)?;
        let url = UrlEncoder::register(cfg.char_dim, cfg.url_dim, &mut params, &mut rng)?;
        let security = SecurityNorm::register(&mut params)?;
        let gnn = GnnLayout::register(&cfg.gnn(), &mut params, &mut rng)?;
        let head = EdgeHead::register(cfg.d, &mut params, &mut rng)?;
        let model = Self {
            cfg: cfg.clone(),
            category,
            url,
            security,
            gnn,
            head,
        };
        Ok((model, params))
    }

    /// Layout for an existing collection, which must match `cfg` exactly.
    pub fn locate(cfg: &ModelConfig, params: &ParamSet) -> Result<Self> {
        let (model, fresh) = Self::init(cfg, 0)?;
        if !fresh.compatible_with(params) {
            return Err(CoreError::config(
                "checkpoint parameters do not match the model configuration",
            ));
        }
        Ok(model)
    }

    /// Modality input vectors, in [`MODALITIES`] order.
    pub fn embed_inputs(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        params: &ParamSet,
        inputs: &NodeInputs,
        mode: Mode,
    ) -> Result<(Vec<Var>, Option<BatchStats>)> {
        let ip = tape.constant(inputs.ip.clone())?;
        let cat = self.category.embed(tape, vars, inputs.category.clone())?;
        let content = tape.constant(inputs.content.clone())?;
        let url = self.url.encode(tape, vars, &inputs.urls)?;
        let (sec, stats) = self.security.embed(tape, vars, params, &inputs.security, mode)?;
        Ok((vec![ip, cat, content, url, sec], stats))
    }

    /// Node representations plus probabilities for `pairs` of local rows.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        inputs: &NodeInputs,
        msgs: &Messages,
        hops: usize,
        pairs: &[(usize, usize)],
        mode: Mode,
    ) -> Result<Forward> {
        if msgs.n != inputs.n {
            return Err(CoreError::config(format!(
                "{} input rows for a graph of {} nodes",
                inputs.n, msgs.n
            )));
        }
        let vars = bind(tape, params)?;
        let (xs, bn) = self.embed_inputs(tape, &vars, params, inputs, mode)?;
        let reps = node_representations(tape, &self.cfg.gnn(), &self.gnn, &vars, &xs, msgs, hops)?;
        let probs = self
            .head
            .probabilities(tape, &vars, reps.fused, pairs, self.cfg.slope)?;
        Ok(Forward { probs, reps, bn })
    }
}
