//! Define-by-run reverse-mode automatic differentiation.
//!
//! Ops append records to a tape as they execute; `backward` walks the tape
//! in reverse creation order (which is a reverse topological order, since
//! every input must exist before the op that consumes it).

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Clamp applied to BCE predictions before the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Broadcast a length-n bias over the rows of an m×n matrix.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    ConcatCols(Var, Var),
    Reshape(Var),
    /// Repeat a matrix `times` along rows (shared parameters tiled over a
    /// frame batch); backward sums the tile gradients.
    TileRows(Var, usize),
    /// Block-diagonal `a_g · b_gᵀ` over `groups` equal row blocks.
    GroupedMatmulNT {
        a: Var,
        b: Var,
        groups: usize,
    },
    /// Block-diagonal `a_g · b_g` over `groups` equal row blocks.
    GroupedMatmul {
        a: Var,
        b: Var,
        groups: usize,
    },
    BceMean {
        pred: Var,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph (tape).
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Finiteness was enforced by `Tensor`'s public
    /// constructors, the graph boundary.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if populated.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_op(node.value.shape().to_vec(), g.clone()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).rows_cols()?;
        let (kb, n) = self.value(b).rows_cols()?;
        if ka != kb {
            return Err(Error::dim(format!(
                "matmul inner dims: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_op(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).rows_cols()?;
        let mut out = vec![0.0; m * n];
        kernels::transpose(self.value(a).data(), m, n, &mut out);
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::from_op(vec![n, m], out), Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "elementwise shapes: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::from_op(shape, data), op, rg))
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).rows_cols()?;
        if self.value(bias).shape() != [n] {
            return Err(Error::dim(format!(
                "add_row bias {:?} vs row width {n}",
                self.value(bias).shape()
            )));
        }
        let bdata = self.value(bias).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bdata[i % n])
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a, bias]);
        let _ = m;
        Ok(self.push(Tensor::from_op(shape, data), Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::from_op(shape, data), Op::Scale(a, c), rg)
    }

    /// Stabilized softmax over the last axis of a 1-D or 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).rows_cols()?;
        if cols == 0 {
            return Err(Error::dim("softmax over an empty axis"));
        }
        let mut out = vec![0.0; rows * cols];
        kernels::softmax_rows(self.value(a).data(), rows, cols, &mut out);
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::from_op(shape, out), Op::SoftmaxRows(a), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::from_op(shape, data), Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::from_op(shape, data), Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| kernels::sigmoid(x))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::from_op(shape, data), Op::Sigmoid(a), rg)
    }

    /// Row-wise layer norm with learnable gain and bias (length n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols()?;
        if self.value(gain).shape() != [cols] || self.value(bias).shape() != [cols] {
            return Err(Error::dim(format!(
                "layer_norm gain/bias {:?}/{:?} vs width {cols}",
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let mut out = vec![0.0; rows * cols];
        kernels::layer_norm_rows(
            self.value(x).data(),
            rows,
            cols,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
            &mut out,
        );
        let shape = self.value(x).shape().to_vec();
        let rg = self.needs_grad(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_op(shape, out),
            Op::LayerNorm { x, gain, bias, eps },
            rg,
        ))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.value(a).rows_cols()?;
        let (mb, nb) = self.value(b).rows_cols()?;
        if ma != mb {
            return Err(Error::dim(format!("concat_cols rows: {ma} vs {mb}")));
        }
        let mut data = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            data.extend_from_slice(&self.value(a).data()[r * na..(r + 1) * na]);
            data.extend_from_slice(&self.value(b).data()[r * nb..(r + 1) * nb]);
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_op(vec![ma, na + nb], data),
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Reinterpret the elements under a new shape (same element count).
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).numel() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?}",
                self.value(a).shape(),
                shape
            )));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::from_op(shape, data), Op::Reshape(a), rg))
    }

    /// Repeat a 2-D tensor `times` along rows.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::dim("tile_rows with zero repetitions"));
        }
        let (m, n) = self.value(a).rows_cols()?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * n * times);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(
            Tensor::from_op(vec![m * times, n], data),
            Op::TileRows(a, times),
            rg,
        ))
    }

    fn group_rows(&self, v: Var, groups: usize, what: &str) -> Result<(usize, usize)> {
        let (m, n) = self.value(v).rows_cols()?;
        if groups == 0 || m % groups != 0 {
            return Err(Error::dim(format!(
                "{what}: {m} rows not divisible into {groups} groups"
            )));
        }
        Ok((m / groups, n))
    }

    /// Block-diagonal `a_g · b_gᵀ`: both operands are stacks of `groups`
    /// equal-height blocks sharing the feature width.
    pub fn grouped_matmul_nt(&mut self, a: Var, b: Var, groups: usize) -> Result<Var> {
        let (ma, na) = self.group_rows(a, groups, "grouped_matmul_nt a")?;
        let (mb, nb) = self.group_rows(b, groups, "grouped_matmul_nt b")?;
        if na != nb {
            return Err(Error::dim(format!(
                "grouped_matmul_nt widths: {na} vs {nb}"
            )));
        }
        let mut out = vec![0.0; groups * ma * mb];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let mut bt = vec![0.0; mb * nb];
            for g in 0..groups {
                kernels::transpose(&bv[g * mb * nb..(g + 1) * mb * nb], mb, nb, &mut bt);
                kernels::matmul(
                    &av[g * ma * na..(g + 1) * ma * na],
                    &bt,
                    ma,
                    na,
                    mb,
                    &mut out[g * ma * mb..(g + 1) * ma * mb],
                );
            }
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_op(vec![groups * ma, mb], out),
            Op::GroupedMatmulNT { a, b, groups },
            rg,
        ))
    }

    /// Block-diagonal `a_g · b_g`: row blocks of `a` are `[mq × mk]`
    /// weights, row blocks of `b` are `[mk × dv]` values.
    pub fn grouped_matmul(&mut self, a: Var, b: Var, groups: usize) -> Result<Var> {
        let (ma, na) = self.group_rows(a, groups, "grouped_matmul a")?;
        let (mb, nb) = self.group_rows(b, groups, "grouped_matmul b")?;
        if na != mb {
            return Err(Error::dim(format!(
                "grouped_matmul inner dims: {na} vs {mb}"
            )));
        }
        let mut out = vec![0.0; groups * ma * nb];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for g in 0..groups {
                kernels::matmul(
                    &av[g * ma * na..(g + 1) * ma * na],
                    &bv[g * mb * nb..(g + 1) * mb * nb],
                    ma,
                    na,
                    nb,
                    &mut out[g * ma * nb..(g + 1) * ma * nb],
                );
            }
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_op(vec![groups * ma, nb], out),
            Op::GroupedMatmul { a, b, groups },
            rg,
        ))
    }

    /// Block-diagonal attention over `groups` frames stacked along rows:
    /// `softmax(q_g·k_gᵀ/√d)·v_g` per group, one softmax row per query.
    pub fn grouped_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
    ) -> Result<(Var, Var)> {
        let (_, d) = self.value(q).rows_cols()?;
        let scores = self.grouped_matmul_nt(q, k, groups)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax(scaled)?;
        let out = self.grouped_matmul(weights, v, groups)?;
        Ok((out, weights))
    }

    /// `softmax(q·kᵀ/√d)·v`, returning the context and the attention
    /// weights (one row per query, used downstream for attribution).
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
        let (_, d) = self.value(q).rows_cols()?;
        let (lk, dk) = self.value(k).rows_cols()?;
        let (lv, _) = self.value(v).rows_cols()?;
        if d != dk {
            return Err(Error::dim(format!("attention q/k widths: {d} vs {dk}")));
        }
        if lk != lv {
            return Err(Error::dim(format!("attention k/v rows: {lk} vs {lv}")));
        }
        if lk == 0 {
            return Err(Error::dim("attention over zero keys"));
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax(scaled)?;
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Mean binary cross-entropy against constant 0/1 targets. Predictions
    /// are clamped to `[BCE_EPS, 1 − BCE_EPS]` before the logs.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.numel() || p.numel() == 0 {
            return Err(Error::dim(format!(
                "bce pred {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if let Some(bad) = target.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::value(format!("bce target {bad} not in {{0,1}}")));
        }
        let n = p.numel() as f64;
        let mut acc = 0.0;
        for (&pi, &yi) in p.data().iter().zip(target.data()) {
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            acc -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
        }
        let rg = self.needs_grad(&[pred]);
        Ok(self.push(
            Tensor::from_op(vec![], vec![acc / n]),
            Op::BceMean {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Mean of a list of scalar nodes (used to average per-frame losses).
    pub fn mean_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("mean of zero scalars"));
        }
        for v in parts {
            if !self.value(*v).is_scalar() {
                return Err(Error::dim("mean_scalars expects scalar nodes"));
            }
        }
        let mut acc = parts[0];
        for v in &parts[1..] {
            acc = self.add(acc, *v)?;
        }
        Ok(self.scale(acc, 1.0 / parts.len() as f64))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar node. Every `requires_grad` leaf ends up
    /// with a populated (possibly zero) gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::dim(format!(
                "backward target must be scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::state(
                "backward target does not depend on any differentiable leaf",
            ));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            // Take the upstream gradient out to avoid aliasing the node
            // while accumulating into its inputs.
            let upstream = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &op, &upstream);
            self.nodes[i].grad = Some(upstream);
        }

        // Disconnected differentiable leaves still report a (zero) gradient.
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let g = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }

    fn propagate(&mut self, node_idx: usize, op: &Op, d: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.value(*a).rows_cols().unwrap();
                let (_, n) = self.value(*b).rows_cols().unwrap();
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let mut bt = vec![0.0; k * n];
                    kernels::transpose(self.value(*b).data(), k, n, &mut bt);
                    let mut da = vec![0.0; m * k];
                    kernels::matmul(d, &bt, m, n, k, &mut da);
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let mut at = vec![0.0; m * k];
                    kernels::transpose(self.value(*a).data(), m, k, &mut at);
                    let mut db = vec![0.0; k * n];
                    kernels::matmul(&at, d, k, m, n, &mut db);
                    self.accumulate(*b, &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).rows_cols().unwrap();
                let mut da = vec![0.0; m * n];
                kernels::transpose(d, n, m, &mut da);
                self.accumulate(*a, &da);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, d);
                self.accumulate(*b, d);
            }
            Op::AddRow(a, bias) => {
                self.accumulate(*a, d);
                if self.nodes[bias.0].requires_grad {
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for (i, &di) in d.iter().enumerate() {
                        db[i % n] += di;
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, d);
                if self.nodes[b.0].requires_grad {
                    let neg: Vec<f64> = d.iter().map(|&x| -x).collect();
                    self.accumulate(*b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = d
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&di, &bi)| di * bi)
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let db: Vec<f64> = d
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&di, &ai)| di * ai)
                        .collect();
                    self.accumulate(*b, &db);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = d.iter().map(|&x| x * c).collect();
                self.accumulate(*a, &da);
            }
            Op::SoftmaxRows(a) => {
                // dx = y ⊙ (dy − ⟨dy, y⟩) per row
                let y = self.nodes[node_idx].value.clone();
                let (rows, cols) = y.rows_cols().unwrap();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let dr = &d[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(dr).map(|(&yi, &di)| yi * di).sum();
                    for j in 0..cols {
                        da[r * cols + j] = yr[j] * (dr[j] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Gelu(a) => {
                let da: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &di)| kernels::gelu_deriv(x) * di)
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &di)| if x > 0.0 { di } else { 0.0 })
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[node_idx].value.clone();
                let da: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&yi, &di)| yi * (1.0 - yi) * di)
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (rows, cols) = self.value(*x).rows_cols().unwrap();
                let xv = self.value(*x).data().to_vec();
                let gv = self.value(*gain).data().to_vec();
                let mut dx = vec![0.0; rows * cols];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let dr = &d[r * cols..(r + 1) * cols];
                    let (mu, inv_s) = kernels::row_moments(row, *eps);
                    let n = cols as f64;
                    let mut mean_t = 0.0;
                    let mut mean_tx = 0.0;
                    for j in 0..cols {
                        let xhat = (row[j] - mu) * inv_s;
                        let t = gv[j] * dr[j];
                        mean_t += t;
                        mean_tx += t * xhat;
                        dgain[j] += dr[j] * xhat;
                        dbias[j] += dr[j];
                    }
                    mean_t /= n;
                    mean_tx /= n;
                    for j in 0..cols {
                        let xhat = (row[j] - mu) * inv_s;
                        dx[r * cols + j] = (gv[j] * dr[j] - mean_t - xhat * mean_tx) * inv_s;
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gain, &dgain);
                self.accumulate(*bias, &dbias);
            }
            Op::ConcatCols(a, b) => {
                let (ma, na) = self.value(*a).rows_cols().unwrap();
                let (_, nb) = self.value(*b).rows_cols().unwrap();
                let total = na + nb;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; ma * na];
                    for r in 0..ma {
                        da[r * na..(r + 1) * na]
                            .copy_from_slice(&d[r * total..r * total + na]);
                    }
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; ma * nb];
                    for r in 0..ma {
                        db[r * nb..(r + 1) * nb]
                            .copy_from_slice(&d[r * total + na..(r + 1) * total]);
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Reshape(a) => {
                self.accumulate(*a, d);
            }
            Op::TileRows(a, times) => {
                let numel = self.value(*a).numel();
                let mut da = vec![0.0; numel];
                for t in 0..*times {
                    for (acc, &g) in da.iter_mut().zip(&d[t * numel..(t + 1) * numel]) {
                        *acc += g;
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::GroupedMatmulNT { a, b, groups } => {
                // c_g = a_g · b_gᵀ  =>  da_g = dc_g · b_g, db_g = dc_gᵀ · a_g
                let (ma, na) = self.value(*a).rows_cols().unwrap();
                let (mb, _) = self.value(*b).rows_cols().unwrap();
                let (ma, mb, na) = (ma / groups, mb / groups, na);
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; groups * ma * na];
                    for g in 0..*groups {
                        kernels::matmul(
                            &d[g * ma * mb..(g + 1) * ma * mb],
                            &bv[g * mb * na..(g + 1) * mb * na],
                            ma,
                            mb,
                            na,
                            &mut da[g * ma * na..(g + 1) * ma * na],
                        );
                    }
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; groups * mb * na];
                    let mut dct = vec![0.0; ma * mb];
                    for g in 0..*groups {
                        kernels::transpose(&d[g * ma * mb..(g + 1) * ma * mb], ma, mb, &mut dct);
                        kernels::matmul(
                            &dct,
                            &av[g * ma * na..(g + 1) * ma * na],
                            mb,
                            ma,
                            na,
                            &mut db[g * mb * na..(g + 1) * mb * na],
                        );
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::GroupedMatmul { a, b, groups } => {
                // c_g = a_g · b_g  =>  da_g = dc_g · b_gᵀ, db_g = a_gᵀ · dc_g
                let (ma, na) = self.value(*a).rows_cols().unwrap();
                let (mb, nb) = self.value(*b).rows_cols().unwrap();
                let (ma, mb) = (ma / groups, mb / groups);
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; groups * ma * na];
                    let mut bt = vec![0.0; mb * nb];
                    for g in 0..*groups {
                        kernels::transpose(&bv[g * mb * nb..(g + 1) * mb * nb], mb, nb, &mut bt);
                        kernels::matmul(
                            &d[g * ma * nb..(g + 1) * ma * nb],
                            &bt,
                            ma,
                            nb,
                            mb,
                            &mut da[g * ma * na..(g + 1) * ma * na],
                        );
                    }
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; groups * mb * nb];
                    let mut at = vec![0.0; ma * na];
                    for g in 0..*groups {
                        kernels::transpose(&av[g * ma * na..(g + 1) * ma * na], ma, na, &mut at);
                        kernels::matmul(
                            &at,
                            &d[g * ma * nb..(g + 1) * ma * nb],
                            na,
                            ma,
                            nb,
                            &mut db[g * mb * nb..(g + 1) * mb * nb],
                        );
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::BceMean { pred, target } => {
                // d/dp of mean BCE; zero where the clamp is active.
                let p = self.value(*pred).data().to_vec();
                let n = p.len() as f64;
                let scale = d[0] / n;
                let dp: Vec<f64> = p
                    .iter()
                    .zip(target.data())
                    .map(|(&pi, &yi)| {
                        if pi <= BCE_EPS || pi >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            scale * (pi - yi) / (pi * (1.0 - pi))
                        }
                    })
                    .collect();
                self.accumulate(*pred, &dp);
            }
        }
    }
}
