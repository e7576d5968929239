//! Plain-f64 reference implementations used as test oracles. Everything
//! here works on nested vectors and shares no code with the crate.

#![allow(dead_code)]

use ndgrad::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn column(v: &[f64]) -> Tensor {
    Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
}

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param(params: &ParamSet, name: &str) -> Mat {
    mat(params.get(name).unwrap_or_else(|| panic!("missing {name}")))
}

pub fn param_col(params: &ParamSet, name: &str) -> Vec<f64> {
    param(params, name).into_iter().map(|r| r[0]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row vector times matrix.
pub fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), w.len());
    let cols = w[0].len();
    (0..cols).map(|j| (0..x.len()).map(|i| x[i] * w[i][j]).sum()).collect()
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn unit(x: &[f64]) -> Vec<f64> {
    let n = dot(x, x).sqrt();
    if n == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

/// Neighbor lists of an undirected edge list on `n` nodes, ascending.
pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in &mut adj {
        l.sort();
    }
    adj
}

/// Random simple graph: each pair present with probability `p`.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                out.push((a, b));
            }
        }
    }
    out
}

/// Attention weights of node `v` over its neighbors `nbrs`, computed from
/// the full projections `h W`.
pub fn attention_oracle(h: &Mat, w: &Mat, a: &[f64], v: usize, nbrs: &[usize], slope: f64) -> Vec<f64> {
    let zv = vecmat(&h[v], w);
    let logits: Vec<f64> = nbrs
        .iter()
        .map(|&u| {
            let zu = vecmat(&h[u], w);
            let sum: Vec<f64> = zu.iter().zip(&zv).map(|(x, y)| x + y).collect();
            leaky(dot(a, &sum), slope)
        })
        .collect();
    softmax(&logits)
}

pub fn aggregate_oracle(h: &Mat, nbrs: &[usize], alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h[0].len()];
    for (&u, &w) in nbrs.iter().zip(alpha) {
        for (o, x) in out.iter_mut().zip(&h[u]) {
            *o += w * x;
        }
    }
    out
}

pub fn update_oracle(h_v: &[f64], agg: &[f64], w: &Mat, slope: f64) -> Vec<f64> {
    let cat: Vec<f64> = h_v.iter().chain(agg).copied().collect();
    vecmat(&cat, w).into_iter().map(|z| leaky(z, slope)).collect()
}

/// Modality weights and fused vector for one node.
pub fn modality_oracle(hs: &[Vec<f64>], w1: &Mat, bs: &[Vec<f64>], bias: f64, slope: f64) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = hs
        .iter()
        .zip(bs)
        .map(|(h, b)| leaky(dot(&vecmat(h, w1), b) + bias, slope))
        .collect();
    let beta = softmax(&logits);
    let mut fused = vec![0.0; hs[0].len()];
    for (h, &w) in hs.iter().zip(&beta) {
        for (f, x) in fused.iter_mut().zip(h) {
            *f += w * x;
        }
    }
    (fused, beta)
}

pub fn edge_oracle(hu: &[f64], hv: &[f64], w_f: &Mat, f_w: &[f64], f_b: f64, slope: f64) -> f64 {
    let one = |a: &[f64], b: &[f64]| {
        let cat: Vec<f64> = a.iter().chain(b).copied().collect();
        let z: Vec<f64> = vecmat(&cat, w_f).into_iter().map(|x| leaky(x, slope)).collect();
        sigmoid(dot(&z, f_w) + f_b)
    };
    0.5 * (one(hu, hv) + one(hv, hu))
}

/// Weights of one message-passing layer; `attn` is `None` for mean pooling.
pub struct LayerW {
    pub attn: Option<(Mat, Vec<f64>)>,
    pub w_layer: Mat,
}

/// One stack run over every node, then row normalization.
pub fn stack_oracle(x: &Mat, layers: &[LayerW], adj: &[Vec<usize>], slope: f64) -> Mat {
    let mut h = x.clone();
    for layer in layers {
        let next: Mat = (0..h.len())
            .map(|v| {
                let nbrs = &adj[v];
                let agg = if nbrs.is_empty() {
                    vec![0.0; h[v].len()]
                } else {
                    let alpha = match &layer.attn {
                        Some((w, a)) => attention_oracle(&h, w, a, v, nbrs, slope),
                        None => vec![1.0 / nbrs.len() as f64; nbrs.len()],
                    };
                    aggregate_oracle(&h, nbrs, &alpha)
                };
                update_oracle(&h[v], &agg, &layer.w_layer, slope)
            })
            .collect();
        h = next;
    }
    h.iter().map(|r| unit(r)).collect()
}

/// Layer weights of stack `m` read back from a parameter collection by name.
pub fn stack_weights(params: &ParamSet, m: usize, layers: usize, mean_pool: bool) -> Vec<LayerW> {
    (1..=layers)
        .map(|l| LayerW {
            attn: (!mean_pool).then(|| {
                (
                    param(params, &format!("gnn.m{m}.l{l}.W_attn")),
                    param_col(params, &format!("gnn.m{m}.l{l}.a")),
                )
            }),
            w_layer: param(params, &format!("gnn.m{m}.l{l}.W_layer")),
        })
        .collect()
}

/// Full message passing for `xs.len()` modalities fused by attention.
pub fn representation_oracle(params: &ParamSet, xs: &[Mat], adj: &[Vec<usize>], layers: usize, slope: f64) -> Mat {
    let per: Vec<Mat> = xs
        .iter()
        .enumerate()
        .map(|(m, x)| stack_oracle(x, &stack_weights(params, m + 1, layers, false), adj, slope))
        .collect();
    let w1 = param(params, "gnn.modality.W1");
    let bs: Vec<Vec<f64>> = (1..=xs.len())
        .map(|m| param_col(params, &format!("gnn.modality.b{m}")))
        .collect();
    let bias = param(params, "gnn.modality.bias")[0][0];
    (0..adj.len())
        .map(|v| {
            let hs: Vec<Vec<f64>> = per.iter().map(|p| p[v].clone()).collect();
            modality_oracle(&hs, &w1, &bs, bias, slope).0
        })
        .collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
