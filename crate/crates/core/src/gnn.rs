//! Per-modality attention message passing and modality fusion.
//!
//! Row-vector convention throughout: node representations are the rows of
//! an `[n x dim]` matrix and weights multiply on the right.

use std::sync::Arc;

use ndgrad::{ParamSet, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::Messages;
use crate::init::{glorot_uniform, zeros};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Input dimension of each modality.
    pub in_dims: Vec<usize>,
    pub d: usize,
    pub layers: usize,
    pub slope: f64,
    /// Uniform neighbor weights instead of attention.
    pub mean_pool: bool,
    /// One stack per modality fused by attention; when off, a single stack
    /// runs over the concatenated inputs.
    pub modality_attn: bool,
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dims.is_empty() || self.in_dims.contains(&0) {
            return Err(CoreError::config("every modality needs a positive input dimension"));
        }
        if self.d == 0 {
            return Err(CoreError::config("hidden dimension must be positive"));
        }
        // Without a layer the stack outputs keep their input widths, which
        // neither fusion nor the edge head can take.
        if self.layers == 0 {
            return Err(CoreError::config("at least one message-passing layer is required"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(CoreError::config(format!("leaky slope {} not in (0,1)", self.slope)));
        }
        Ok(())
    }

    /// Input dimension of each message-passing stack.
    pub fn stack_dims(&self) -> Vec<usize> {
        if self.modality_attn {
            self.in_dims.clone()
        } else {
            vec![self.in_dims.iter().sum()]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub w_layer: usize,
    /// Absent in mean-pool mode.
    pub attn: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModalitySlots {
    pub w1: usize,
    pub b_m: Vec<usize>,
    pub bias: usize,
}

/// Where each GNN weight lives in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnLayout {
    pub stacks: Vec<Vec<LayerSlots>>,
    pub modality: Option<ModalitySlots>,
}

fn layer_name(m: usize, l: usize, what: &str) -> String {
    format!("gnn.m{}.l{}.{what}", m + 1, l + 1)
}

fn lookup(params: &ParamSet, name: &str, shape: &[usize]) -> Result<usize> {
    let slot = params
        .slot(name)
        .ok_or_else(|| CoreError::config(format!("parameter {name} missing")))?;
    if params.value(slot).shape() != shape {
        return Err(CoreError::config(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            params.value(slot).shape()
        )));
    }
    Ok(slot)
}

impl GnnLayout {
    /// `(name, rows, cols, is_bias)` for every weight, in registration order.
    fn plan(cfg: &GnnConfig) -> Vec<(String, usize, usize, bool)> {
        let d = cfg.d;
        let mut out = Vec::new();
        for (m, &in0) in cfg.stack_dims().iter().enumerate() {
            for l in 0..cfg.layers {
                let inp = if l == 0 { in0 } else { d };
                if !cfg.mean_pool {
                    out.push((layer_name(m, l, "W_attn"), inp, d, false));
                    out.push((layer_name(m, l, "a"), d, 1, false));
                }
                out.push((layer_name(m, l, "W_layer"), 2 * inp, d, false));
            }
        }
        if cfg.modality_attn {
            out.push(("gnn.modality.W1".into(), d, d, false));
            for m in 0..cfg.in_dims.len() {
                out.push((format!("gnn.modality.b{}", m + 1), d, 1, false));
            }
            out.push(("gnn.modality.bias".into(), 1, 1, true));
        }
        out
    }

    /// Adds freshly initialized GNN weights to `params`.
    pub fn register(cfg: &GnnConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        for (name, r, c, bias) in Self::plan(cfg) {
            let value = if bias { zeros(r, c) } else { glorot_uniform(rng, r, c) };
            params.push(name, value, true)?;
        }
        Self::locate(cfg, params)
    }

    /// Finds the GNN weights of `cfg` in an existing collection.
    pub fn locate(cfg: &GnnConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let mut stacks = Vec::new();
        for (m, &in0) in cfg.stack_dims().iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..cfg.layers {
                let inp = if l == 0 { in0 } else { d };
                let attn = if cfg.mean_pool {
                    None
                } else {
                    Some((
                        lookup(params, &layer_name(m, l, "W_attn"), &[inp, d])?,
                        lookup(params, &layer_name(m, l, "a"), &[d, 1])?,
                    ))
                };
                layers.push(LayerSlots {
                    w_layer: lookup(params, &layer_name(m, l, "W_layer"), &[2 * inp, d])?,
                    attn,
                });
            }
            stacks.push(layers);
        }
        let modality = if cfg.modality_attn {
            Some(ModalitySlots {
                w1: lookup(params, "gnn.modality.W1", &[d, d])?,
                b_m: (0..cfg.in_dims.len())
                    .map(|m| lookup(params, &format!("gnn.modality.b{}", m + 1), &[d, 1]))
                    .collect::<Result<_>>()?,
                bias: lookup(params, "gnn.modality.bias", &[1, 1])?,
            })
        } else {
            None
        };
        Ok(Self { stacks, modality })
    }
}

/// Attention coefficient of every message, normalized over each
/// destination's incoming messages. Shape `[E x 1]`.
///
/// `a . (h_src W + h_dst W)` is evaluated as `s_src + s_dst` with
/// `s = h (W a)`, which is the same quantity without a per-node `d`-wide
/// projection.
pub fn neighbor_attention(tape: &mut Tape, h: Var, w_attn: Var, a: Var, msgs: &Messages, slope: f64) -> Result<Var> {
    let wa = tape.matmul(w_attn, a)?;
    let s = tape.matmul(h, wa)?;
    let s_src = tape.gather_rows(s, msgs.src.clone())?;
    let s_dst = tape.gather_rows(s, msgs.dst.clone())?;
    let e = tape.add(s_src, s_dst)?;
    let e = tape.leaky_relu(e, slope)?;
    Ok(tape.segment_softmax(e, msgs.dst.clone())?)
}

/// `1 / in_degree(dst)` for every message.
pub fn mean_weights(msgs: &Messages) -> Tensor {
    let deg = msgs.in_degree();
    let w = msgs.dst.iter().map(|&d| 1.0 / deg[d] as f64).collect();
    Tensor::matrix(msgs.len(), 1, w).expect("finite")
}

/// Weighted sum of incoming neighbor rows; nodes without messages get zeros.
pub fn aggregate(tape: &mut Tape, h: Var, alpha: Var, msgs: &Messages) -> Result<Var> {
    let from = tape.gather_rows(h, msgs.src.clone())?;
    let weighted = tape.mul_col(from, alpha)?;
    Ok(tape.scatter_add_rows(weighted, msgs.dst.clone(), msgs.n)?)
}

/// `leaky(concat(h, agg) W_layer)`.
pub fn layer_update(tape: &mut Tape, h: Var, agg: Var, w_layer: Var, slope: f64) -> Result<Var> {
    let cat = tape.concat_cols(&[h, agg])?;
    let z = tape.matmul(cat, w_layer)?;
    Ok(tape.leaky_relu(z, slope)?)
}

/// Fuses per-modality rows by softmax weights over modalities.
/// Returns the fused `[n x d]` matrix and the `[n x M]` weights.
pub fn modality_attention(
    tape: &mut Tape,
    hs: &[Var],
    w1: Var,
    b_m: &[Var],
    bias: Var,
    slope: f64,
) -> Result<(Var, Var)> {
    if hs.is_empty() || hs.len() != b_m.len() {
        return Err(CoreError::config(format!(
            "{} modality inputs for {} attention vectors",
            hs.len(),
            b_m.len()
        )));
    }
    let mut logits = Vec::with_capacity(hs.len());
    for (&h, &b) in hs.iter().zip(b_m) {
        let r = tape.matmul(w1, b)?;
        let q = tape.matmul(h, r)?;
        let q = tape.add_row(q, bias)?;
        logits.push(tape.leaky_relu(q, slope)?);
    }
    let cat = tape.concat_cols(&logits)?;
    let beta = tape.row_softmax(cat)?;
    let mut fused: Option<Var> = None;
    for (m, &h) in hs.iter().enumerate() {
        let w = tape.slice_cols(beta, m, 1)?;
        let part = tape.mul_col(h, w)?;
        fused = Some(match fused {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    Ok((fused.expect("at least one modality"), beta))
}

#[derive(Clone, Debug)]
pub struct NodeReps {
    /// Unit-normalized output of each stack.
    pub per_modality: Vec<Var>,
    pub fused: Var,
    /// Modality weights `[n x M]`, when modality attention is on.
    pub beta: Option<Var>,
}

/// Full message passing: `layers` rounds of attention, aggregation and
/// update per stack, row normalization, then modality fusion.
///
/// `vars[slot]` must hold the tape handle of parameter `slot`. `hops` is
/// the depth the computation graph was extracted with.
pub fn node_representations(
    tape: &mut Tape,
    cfg: &GnnConfig,
    layout: &GnnLayout,
    vars: &[Var],
    xs: &[Var],
    msgs: &Messages,
    hops: usize,
) -> Result<NodeReps> {
    if hops < cfg.layers {
        return Err(CoreError::config(format!(
            "subgraph of {hops} hops cannot feed {} layers",
            cfg.layers
        )));
    }
    if xs.len() != cfg.in_dims.len() {
        return Err(CoreError::config(format!(
            "{} modality inputs, configured for {}",
            xs.len(),
            cfg.in_dims.len()
        )));
    }
    let inputs = if cfg.modality_attn {
        xs.to_vec()
    } else {
        vec![tape.concat_cols(xs)?]
    };
    let uniform = if cfg.mean_pool {
        Some(tape.constant(mean_weights(msgs))?)
    } else {
        None
    };
    let mut per_modality = Vec::with_capacity(inputs.len());
    for (x, stack) in inputs.into_iter().zip(&layout.stacks) {
        let mut h = x;
        for layer in stack {
            let alpha = match (layer.attn, uniform) {
                (Some((w, a)), _) => neighbor_attention(tape, h, vars[w], vars[a], msgs, cfg.slope)?,
                (None, Some(u)) => u,
                (None, None) => unreachable!("layout matches config"),
            };
            let agg = aggregate(tape, h, alpha, msgs)?;
            h = layer_update(tape, h, agg, vars[layer.w_layer], cfg.slope)?;
        }
        per_modality.push(tape.row_l2_normalize(h)?);
    }
    let (fused, beta) = match &layout.modality {
        Some(ms) => {
            let b: Vec<Var> = ms.b_m.iter().map(|&s| vars[s]).collect();
            let (f, beta) = modality_attention(tape, &per_modality, vars[ms.w1], &b, vars[ms.bias], cfg.slope)?;
            (f, Some(beta))
        }
        None => (per_modality[0], None),
    };
    Ok(NodeReps {
        per_modality,
        fused,
        beta,
    })
}

/// Binds every entry of `params` to `tape`: trainable entries as
/// parameters, the rest as constants.
pub fn bind(tape: &mut Tape, params: &ParamSet) -> Result<Vec<Var>> {
    params
        .iter()
        .enumerate()
        .map(|(slot, e)| {
            if e.trainable {
                tape.param(slot, e.value.clone())
            } else {
                tape.constant(e.value.clone())
            }
            .map_err(CoreError::from)
        })
        .collect()
}

/// Index helper for gathers.
pub fn index(ix: impl IntoIterator<Item = usize>) -> Arc<[usize]> {
    ix.into_iter().collect()
}
