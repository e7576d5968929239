//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every op of one forward pass. Nodes are appended in
//! evaluation order, so the reverse of insertion order is a valid
//! topological order for the backward sweep. Each tape supports exactly one
//! call to [`Tape::backward`]; the next forward pass builds a fresh tape.

use std::sync::Arc;

use crate::error::{shape_err, NdError, Result};
use crate::func::{self, BCE_EPS};
use crate::tensor::{gemm, Layout, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    RowSoftmax(Var),
    RowL2Normalize(Var),
    BatchNorm(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Bce(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// False for constants and for ops whose inputs are all constant.
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Scale(x, _)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::SliceCols(x, _)
            | Op::SliceRows(x, _)
            | Op::GatherRows(x, _)
            | Op::ScatterAddRows(x, _)
            | Op::SegmentSoftmax(x, _)
            | Op::RowSoftmax(x)
            | Op::RowL2Normalize(x)
            | Op::BatchNorm(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Bce(x, _) => vec![*x],
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    /// Indexed by node; populated for leaves and parameters only.
    nodes: Vec<Option<Tensor>>,
    /// `(param slot, node)` pairs in recording order.
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Accumulated gradient of parameter `slot`, if that slot was used.
    pub fn param(&self, slot: usize) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(s, node) in &self.params {
            if s != slot {
                continue;
            }
            if let Some(g) = &self.nodes[node] {
                match &mut acc {
                    None => acc = Some(g.clone()),
                    Some(a) => add_into(a.data_mut(), g.data()),
                }
            }
        }
        acc
    }

    /// One gradient per parameter shape in `shapes`; unused slots get zeros.
    pub fn dense(&self, shapes: &[&[usize]]) -> Vec<Tensor> {
        shapes
            .iter()
            .enumerate()
            .map(|(slot, shape)| self.param(slot).unwrap_or_else(|| Tensor::zeros(shape)))
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Tensor>], nodes: &[Node], v: Var) -> &'g mut [f64] {
    let shape = nodes[v.0].value.shape();
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].needs_grad
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NdError::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        let needs_grad = match op {
            Op::Leaf | Op::Param(_) => true,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.push_node(op_name, value, op, needs_grad)
    }

    fn push_node(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        check_finite(op_name, &value)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// A differentiable input that is not an optimizer-managed parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    /// An input that receives no gradient; ops fed only by constants are
    /// skipped in the backward sweep.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_node("constant", value, Op::Leaf, false)
    }

    /// A parameter identified by `slot` in the caller's parameter collection.
    pub fn param(&mut self, slot: usize, value: Tensor) -> Result<Var> {
        self.push("param", value, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::N,
            self.value(b).data(),
            Layout::N,
            &mut out,
        );
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `x[m x n] + b[1 x n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(b) != (1, n) {
            return shape_err("add_row", format!("[{m}x{n}] + {:?}", self.dims(b)));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            add_into(row, bv);
        }
        self.push("add_row", Tensor::from_parts(vec![m, n], out), Op::AddRow(x, b))
    }

    /// `x[m x n] * s[1 x n]`, scaling each column.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(s) != (1, n) {
            return shape_err("mul_row", format!("[{m}x{n}] * {:?}", self.dims(s)));
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, &w) in row.iter_mut().zip(sv) {
                *o *= w;
            }
        }
        self.push("mul_row", Tensor::from_parts(vec![m, n], out), Op::MulRow(x, s))
    }

    /// `x[m x n] * w[m x 1]`, scaling each row.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(w) != (m, 1) {
            return shape_err("mul_col", format!("[{m}x{n}] * {:?}", self.dims(w)));
        }
        let wv = self.value(w).data();
        let mut out = self.value(x).data().to_vec();
        if n > 0 {
            for (row, &s) in out.chunks_mut(n).zip(wv) {
                for o in row.iter_mut() {
                    *o *= s;
                }
            }
        }
        self.push("mul_col", Tensor::from_parts(vec![m, n], out), Op::MulCol(x, w))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * c);
        self.push("scale", v, Op::Scale(x, c))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let v = func::leaky_relu(self.value(x), slope)?;
        self.push("leaky_relu", v, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = func::sigmoid(self.value(x));
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(x))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let m = self.dims(first).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return shape_err("concat_cols", "row counts differ");
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + width > n {
            return shape_err("slice_cols", format!("{start}+{width} > {n}"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + width]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![m, width], out),
            Op::SliceCols(x, start),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + count > m {
            return shape_err("slice_rows", format!("{start}+{count} > {m}"));
        }
        let out = self.value(x).data()[start * n..(start + count) * n].to_vec();
        self.push(
            "slice_rows",
            Tensor::from_parts(vec![count, n], out),
            Op::SliceRows(x, start),
        )
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (m, n) = self.dims(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return shape_err("gather_rows", format!("row {bad} of {m}"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rows = index.len();
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![rows, n], out),
            Op::GatherRows(x, index),
        )
    }

    /// Sums row `i` of `x` into output row `segment[i]`; rows without any
    /// contribution stay zero.
    pub fn scatter_add_rows(&mut self, x: Var, segment: Arc<[usize]>, out_rows: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if segment.len() != m {
            return shape_err("scatter_add_rows", format!("{} segments for {m} rows", segment.len()));
        }
        if segment.iter().any(|&s| s >= out_rows) {
            return shape_err("scatter_add_rows", "segment id out of range");
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; out_rows * n];
        for (i, &s) in segment.iter().enumerate() {
            add_into(&mut out[s * n..(s + 1) * n], &src[i * n..(i + 1) * n]);
        }
        self.push(
            "scatter_add_rows",
            Tensor::from_parts(vec![out_rows, n], out),
            Op::ScatterAddRows(x, segment),
        )
    }

    /// Softmax of a column vector `x[E x 1]` within groups sharing a
    /// `segment` id. Entries of a segment need not be contiguous.
    pub fn segment_softmax(&mut self, x: Var, segment: Arc<[usize]>) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n != 1 || segment.len() != m {
            return shape_err("segment_softmax", format!("[{m}x{n}] with {} segments", segment.len()));
        }
        let groups = segment.iter().copied().max().map_or(0, |s| s + 1);
        let src = self.value(x).data();
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (&s, &v) in segment.iter().zip(src) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = segment.iter().zip(src).map(|(&s, &v)| (v - max[s]).exp()).collect();
        let mut total = vec![0.0; groups];
        for (&s, &e) in segment.iter().zip(&out) {
            total[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(segment.iter()) {
            *o /= total[s];
        }
        self.push(
            "segment_softmax",
            Tensor::from_parts(vec![m, 1], out),
            Op::SegmentSoftmax(x, segment),
        )
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n == 0 {
            return Err(NdError::Invalid("softmax of an empty row".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for (o, s) in out.chunks_mut(n).zip(src.chunks(n)) {
            func::softmax_into(s, o);
        }
        self.push("row_softmax", Tensor::from_parts(vec![m, n], out), Op::RowSoftmax(x))
    }

    /// Unit-normalizes each row; rows with norm `<= NORM_EPS` pass through.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let mut out = self.value(x).data().to_vec();
        if n > 0 {
            for row in out.chunks_mut(n) {
                let nrm = func::l2_norm(row);
                if nrm > func::NORM_EPS {
                    row.iter_mut().for_each(|v| *v /= nrm);
                }
            }
        }
        self.push(
            "row_l2_normalize",
            Tensor::from_parts(vec![m, n], out),
            Op::RowL2Normalize(x),
        )
    }

    /// Standardizes each column by its batch mean and biased variance.
    /// Returns the normalized values plus the batch mean and variance.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (m, n) = self.dims(x);
        if m < 2 {
            return Err(NdError::Invalid(format!(
                "batch norm in train mode needs at least 2 rows, got {m}"
            )));
        }
        let src = self.value(x).data();
        let mut mean = vec![0.0; n];
        for row in src.chunks(n) {
            add_into(&mut mean, row);
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; n];
        for row in src.chunks(n) {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = src.to_vec();
        for row in out.chunks_mut(n) {
            for j in 0..n {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let v = self.push(
            "batch_norm",
            Tensor::from_parts(vec![m, n], out),
            Op::BatchNorm(x, inv_std),
        )?;
        Ok((v, mean, var))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::from_parts(vec![], vec![s]), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(NdError::Invalid("mean of an empty tensor".into()));
        }
        let s = t.sum() / t.numel() as f64;
        self.push("mean", Tensor::from_parts(vec![], vec![s]), Op::Mean(x))
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`,
    /// clamping `p` to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_mean(&mut self, p: Var, targets: Arc<[f64]>) -> Result<Var> {
        let pv = self.value(p).data();
        if pv.len() != targets.len() || pv.is_empty() {
            return shape_err(
                "bce_mean",
                format!("{} predictions, {} targets", pv.len(), targets.len()),
            );
        }
        let loss = func::bce_mean(pv, &targets)?;
        self.push("bce_mean", Tensor::from_parts(vec![], vec![loss]), Op::Bce(p, targets))
    }

    /// Reverse sweep from the scalar `loss`. Consumes the tape's single
    /// backward allowance.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NdError::BackwardConsumed);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(NdError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((slot, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).cols();
                if wants(nodes, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        gd,
                        Layout::N,
                        val(*b).data(),
                        Layout::T,
                        grad_slot(grads, nodes, *a),
                    );
                }
                if wants(nodes, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        val(*a).data(),
                        Layout::T,
                        gd,
                        Layout::N,
                        grad_slot(grads, nodes, *b),
                    );
                }
            }
            Op::Add(a, b) => {
                add_into(grad_slot(grads, nodes, *a), gd);
                add_into(grad_slot(grads, nodes, *b), gd);
            }
            Op::Sub(a, b) => {
                add_into(grad_slot(grads, nodes, *a), gd);
                for (d, s) in grad_slot(grads, nodes, *b).iter_mut().zip(gd) {
                    *d -= s;
                }
            }
            Op::Mul(a, b) => {
                let av = val(*a).data();
                let bv = val(*b).data();
                if wants(nodes, *a) {
                    let ga: Vec<f64> = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                    add_into(grad_slot(grads, nodes, *a), &ga);
                }
                if wants(nodes, *b) {
                    let gb: Vec<f64> = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                    add_into(grad_slot(grads, nodes, *b), &gb);
                }
            }
            Op::AddRow(x, b) => {
                let n = val(*x).cols();
                add_into(grad_slot(grads, nodes, *x), gd);
                let gb = grad_slot(grads, nodes, *b);
                if n > 0 {
                    for row in gd.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MulRow(x, s) => {
                let n = val(*x).cols();
                let sv = val(*s).data();
                let xv = val(*x).data();
                if n > 0 {
                    let mut gx = vec![0.0; gd.len()];
                    let mut gs = vec![0.0; n];
                    for ((grow, xrow), gxrow) in gd.chunks(n).zip(xv.chunks(n)).zip(gx.chunks_mut(n)) {
                        for j in 0..n {
                            gxrow[j] = grow[j] * sv[j];
                            gs[j] += grow[j] * xrow[j];
                        }
                    }
                    add_into(grad_slot(grads, nodes, *x), &gx);
                    add_into(grad_slot(grads, nodes, *s), &gs);
                }
            }
            Op::MulCol(x, w) => {
                let n = val(*x).cols();
                let wv = val(*w).data();
                let xv = val(*x).data();
                if n > 0 {
                    let mut gx = vec![0.0; gd.len()];
                    let mut gw = vec![0.0; wv.len()];
                    for (r, ((grow, xrow), gxrow)) in gd.chunks(n).zip(xv.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                        let mut s = 0.0;
                        for j in 0..n {
                            gxrow[j] = grow[j] * wv[r];
                            s += grow[j] * xrow[j];
                        }
                        gw[r] = s;
                    }
                    if wants(nodes, *x) {
                        add_into(grad_slot(grads, nodes, *x), &gx);
                    }
                    if wants(nodes, *w) {
                        add_into(grad_slot(grads, nodes, *w), &gw);
                    }
                }
            }
            Op::Scale(x, c) => {
                for (d, s) in grad_slot(grads, nodes, *x).iter_mut().zip(gd) {
                    *d += c * s;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x).data();
                for ((d, s), &xi) in grad_slot(grads, nodes, *x).iter_mut().zip(gd).zip(xv) {
                    *d += if xi > 0.0 { *s } else { slope * s };
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                for ((d, s), &yi) in grad_slot(grads, nodes, *x).iter_mut().zip(gd).zip(y) {
                    *d += s * yi * (1.0 - yi);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                for ((d, s), &yi) in grad_slot(grads, nodes, *x).iter_mut().zip(gd).zip(y) {
                    *d += s * (1.0 - yi * yi);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if !wants(nodes, p) {
                        offset += w;
                        continue;
                    }
                    let gp = grad_slot(grads, nodes, p);
                    for r in 0..m {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &gd[r * total + offset..r * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, w) = node.value.dims2();
                let n = val(*x).cols();
                let gx = grad_slot(grads, nodes, *x);
                for r in 0..m {
                    add_into(&mut gx[r * n + start..r * n + start + w], &gd[r * w..(r + 1) * w]);
                }
            }
            Op::SliceRows(x, start) => {
                let n = val(*x).cols();
                let gx = grad_slot(grads, nodes, *x);
                add_into(&mut gx[start * n..start * n + gd.len()], gd);
            }
            Op::GatherRows(x, index) => {
                let n = val(*x).cols();
                let gx = grad_slot(grads, nodes, *x);
                for (r, &src) in index.iter().enumerate() {
                    add_into(&mut gx[src * n..(src + 1) * n], &gd[r * n..(r + 1) * n]);
                }
            }
            Op::ScatterAddRows(x, segment) => {
                let n = val(*x).cols();
                let gx = grad_slot(grads, nodes, *x);
                for (r, &s) in segment.iter().enumerate() {
                    add_into(&mut gx[r * n..(r + 1) * n], &gd[s * n..(s + 1) * n]);
                }
            }
            Op::SegmentSoftmax(x, segment) => {
                let y = node.value.data();
                let groups = segment.iter().copied().max().map_or(0, |s| s + 1);
                let mut dot = vec![0.0; groups];
                for ((&s, &yi), &gi) in segment.iter().zip(y).zip(gd) {
                    dot[s] += yi * gi;
                }
                let gx = grad_slot(grads, nodes, *x);
                for (r, &s) in segment.iter().enumerate() {
                    gx[r] += y[r] * (gd[r] - dot[s]);
                }
            }
            Op::RowSoftmax(x) => {
                let n = node.value.cols();
                let y = node.value.data();
                let gx = grad_slot(grads, nodes, *x);
                for ((yr, gr), gxr) in y.chunks(n).zip(gd.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gxr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::RowL2Normalize(x) => {
                let n = node.value.cols();
                if n > 0 {
                    let xv = val(*x).data();
                    let y = node.value.data();
                    let gx = grad_slot(grads, nodes, *x);
                    for r in 0..node.value.rows() {
                        let xr = &xv[r * n..(r + 1) * n];
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gd[r * n..(r + 1) * n];
                        let gxr = &mut gx[r * n..(r + 1) * n];
                        let nrm = func::l2_norm(xr);
                        if nrm > func::NORM_EPS {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                gxr[j] += (gr[j] - yr[j] * dot) / nrm;
                            }
                        } else {
                            add_into(gxr, gr);
                        }
                    }
                }
            }
            Op::BatchNorm(x, inv_std) => {
                let (m, n) = node.value.dims2();
                let xhat = node.value.data();
                let mut sum_g = vec![0.0; n];
                let mut sum_gx = vec![0.0; n];
                for (gr, xr) in gd.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                let mf = m as f64;
                let gx = grad_slot(grads, nodes, *x);
                for r in 0..m {
                    for j in 0..n {
                        let k = r * n + j;
                        gx[k] += inv_std[j] / mf * (mf * gd[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                    }
                }
            }
            Op::Sum(x) => {
                let s = gd[0];
                grad_slot(grads, nodes, *x).iter_mut().for_each(|d| *d += s);
            }
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                let s = gd[0] / n;
                grad_slot(grads, nodes, *x).iter_mut().for_each(|d| *d += s);
            }
            Op::Bce(p, targets) => {
                let pv = val(*p).data();
                let n = pv.len() as f64;
                let s = gd[0] / n;
                let gp = grad_slot(grads, nodes, *p);
                for ((d, &pi), &y) in gp.iter_mut().zip(pv).zip(targets.iter()) {
                    if pi > BCE_EPS && pi < 1.0 - BCE_EPS {
                        *d += s * (-y / pi + (1.0 - y) / (1.0 - pi));
                    }
                }
            }
        }
        Ok(())
    }
}
