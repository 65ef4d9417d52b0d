//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every operation computes its forward value eagerly and appends a node to
//! the tape. Nodes only reference earlier nodes, so the tape is always in
//! topological order and the backward sweep is a single reverse pass.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The elementwise operations supported by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Exp,
    Log,
    Relu,
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: ElementwiseOp,
        a: Var,
        b: Var,
        // Index maps for operands that were broadcast to the output shape.
        a_map: Option<Vec<usize>>,
        b_map: Option<Vec<usize>>,
    },
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    EmbedRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` did not influence
    /// the loss or does not require a gradient.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any gradient reached `var`.
    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Operation recorder for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn broadcast_map(out: &[usize], input: &[usize]) -> Option<Vec<usize>> {
    if input.len() > out.len() {
        return None;
    }
    let offset = out.len() - input.len();
    for (d, &n) in input.iter().enumerate() {
        if n != out[offset + d] && n != 1 {
            return None;
        }
    }
    let numel: usize = out.iter().product();
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for d in (0..input.len()).rev() {
        strides[offset + d] = if input[d] == 1 { 0 } else { acc };
        acc *= input[d];
    }
    let mut map = Vec::with_capacity(numel);
    let mut coord = vec![0usize; out.len()];
    for _ in 0..numel {
        map.push(coord.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for d in (0..out.len()).rev() {
            coord[d] += 1;
            if coord[d] < out[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Some(map)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, Some(b)) => self.binary(op, a, b),
            (true, None) => Err(Error::InvalidArgument(format!(
                "{op:?} needs two operands"
            ))),
            (false, Some(_)) => Err(Error::InvalidArgument(format!(
                "{op:?} takes a single operand"
            ))),
            (false, None) => Ok(match op {
                ElementwiseOp::Scale(s) => self.scale(a, s),
                ElementwiseOp::Exp => self.exp(a),
                ElementwiseOp::Log => self.log(a),
                ElementwiseOp::Relu => self.relu(a),
                _ => unreachable!(),
            }),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    fn binary(&mut self, kind: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (out_shape, a_map, b_map) = if sa == sb {
            (sa, None, None)
        } else if let Some(m) = broadcast_map(&sa, &sb) {
            (sa, None, Some(m))
        } else if let Some(m) = broadcast_map(&sb, &sa) {
            (sb, Some(m), None)
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: sa,
                right: sb,
            });
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
            _ => unreachable!(),
        };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let ia = a_map.as_ref().map_or(i, |m| m[i]);
                let ib = b_map.as_ref().map_or(i, |m| m[i]);
                f(va[ia], vb[ib])
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                a,
                b,
                a_map,
                b_map,
            },
            rg,
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose needs a matrix, got shape {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Same-padded 1-D convolution.
    ///
    /// `x` is `[c_in × T]`, `kernel` is `[c_out × c_in × k]` with odd `k`,
    /// optional `bias` is `[c_out]`. Output is `[c_out × T]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 2 || sk.len() != 3 || sk[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: sx,
                right: sk,
            });
        }
        let (c_in, t_len, c_out, k) = (sx[0], sx[1], sk[0], sk[2]);
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d kernel width must be odd, got {k}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    left: self.shape(b).to_vec(),
                    right: vec![c_out],
                });
            }
        }
        let pad = k / 2;
        let xd = self.value(x).data();
        let wd = self.value(kernel).data();
        let mut out = vec![0.0; c_out * t_len];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for co in 0..c_out {
                out[co * t_len..(co + 1) * t_len].fill(bd[co]);
            }
        }
        for co in 0..c_out {
            let orow = &mut out[co * t_len..(co + 1) * t_len];
            for ci in 0..c_in {
                let xrow = &xd[ci * t_len..(ci + 1) * t_len];
                for j in 0..k {
                    let w = wd[(co * c_in + ci) * k + j];
                    // out[t] += w * x[t + j - pad] for in-range source indices
                    let (t0, t1) = valid_range(j, pad, t_len);
                    let src0 = t0 + j - pad;
                    for (o, &xv) in orow[t0..t1].iter_mut().zip(&xrow[src0..]) {
                        *o += w * xv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new([c_out, t_len], out)?,
            Op::Conv1d { x, kernel, bias },
            rg,
        ))
    }

    /// Normalises each column of `x: [C × T]` over its `C` channels, then
    /// applies the per-channel affine map `gain · x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "layer norm eps must be positive, got {eps}"
            )));
        }
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "layer norm needs a [C×T] input, got {sx:?}"
            )));
        }
        let (c, t_len) = (sx[0], sx[1]);
        for p in [gain, bias] {
            if self.shape(p) != [c] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: sx.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let mut mean = vec![0.0; t_len];
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xd[ch * t_len..(ch + 1) * t_len]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        let mut var = vec![0.0; t_len];
        for ch in 0..c {
            for ((s, &v), &m) in var
                .iter_mut()
                .zip(&xd[ch * t_len..(ch + 1) * t_len])
                .zip(&mean)
            {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / c as f64 + eps).sqrt())
            .collect();
        let mut normalized = vec![0.0; c * t_len];
        let mut out = vec![0.0; c * t_len];
        for ch in 0..c {
            for t in 0..t_len {
                let i = ch * t_len + t;
                normalized[i] = (xd[i] - mean[t]) * inv_std[t];
                out[i] = gd[ch] * normalized[i] + bd[ch];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row lookup: `table: [V × E]`, output `[E × T]` with column `t` equal
    /// to row `ids[t]` of the table.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding table must be a matrix, got {st:?}"
            )));
        }
        let (v, e) = (st[0], st[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::OutOfVocabulary { id, vocab: v });
        }
        let td = self.value(table).data();
        let t_len = ids.len();
        let mut out = vec![0.0; e * t_len];
        for (t, &id) in ids.iter().enumerate() {
            for j in 0..e {
                out[j * t_len + t] = td[id * e + j];
            }
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new([e, t_len], out)?,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks `[R_i × T]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let t_len = self.shape(*first).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != t_len {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(*first).to_vec(),
                    right: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new([rows, t_len], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// A tape supports exactly one backward pass; a second call fails with
    /// [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only leaves that asked for gradients keep them.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { shapes, grads })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Binary {
                kind,
                a,
                b,
                a_map,
                b_map,
            } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ia = |i: usize| a_map.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| b_map.as_ref().map_or(i, |m| m[i]);
                if self.rg(*a) {
                    let ga = self.grad_buf(*a, grads);
                    for (i, &gi) in g.iter().enumerate() {
                        ga[ia(i)] += match kind {
                            ElementwiseOp::Mul => gi * vb[ib(i)],
                            _ => gi,
                        };
                    }
                }
                if self.rg(*b) {
                    let gb = self.grad_buf(*b, grads);
                    for (i, &gi) in g.iter().enumerate() {
                        gb[ib(i)] += match kind {
                            ElementwiseOp::Add => gi,
                            ElementwiseOp::Sub => -gi,
                            ElementwiseOp::Mul => gi * va[ia(i)],
                            _ => unreachable!(),
                        };
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    let ga = self.grad_buf(*a, grads);
                    ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi * s);
                }
            }
            Op::Exp(a) => {
                if self.rg(*a) {
                    let y = node.value.data();
                    let ga = self.grad_buf(*a, grads);
                    for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *x += gi * yi;
                    }
                }
            }
            Op::Log(a) => {
                if self.rg(*a) {
                    let xa = self.value(*a).data();
                    let ga = self.grad_buf(*a, grads);
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(xa) {
                        *x += gi / xi;
                    }
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let xa = self.value(*a).data();
                    let ga = self.grad_buf(*a, grads);
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(xa) {
                        if *xi > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // g · bᵀ
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    let prod = matmul_raw(g, &bt, m, n, k);
                    add_into(self.grad_buf(*a, grads), &prod);
                }
                if self.rg(*b) {
                    // aᵀ · g
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    let prod = matmul_raw(&at, g, k, m, n);
                    add_into(self.grad_buf(*b, grads), &prod);
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let s = node.value.shape();
                    let back = transpose_raw(g, s[0], s[1]);
                    add_into(self.grad_buf(*a, grads), &back);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    add_into(self.grad_buf(*a, grads), g);
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let ga = self.grad_buf(*a, grads);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let sx = self.shape(*x);
                let sk = self.shape(*kernel);
                let (c_in, t_len, c_out, k) = (sx[0], sx[1], sk[0], sk[2]);
                let pad = k / 2;
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let gb = self.grad_buf(*b, grads);
                        for co in 0..c_out {
                            gb[co] += g[co * t_len..(co + 1) * t_len].iter().sum::<f64>();
                        }
                    }
                }
                if self.rg(*kernel) {
                    let xd = self.value(*x).data();
                    let gw = self.grad_buf(*kernel, grads);
                    for co in 0..c_out {
                        let grow = &g[co * t_len..(co + 1) * t_len];
                        for ci in 0..c_in {
                            let xrow = &xd[ci * t_len..(ci + 1) * t_len];
                            for j in 0..k {
                                let (t0, t1) = valid_range(j, pad, t_len);
                                let src0 = t0 + j - pad;
                                let s: f64 = grow[t0..t1]
                                    .iter()
                                    .zip(&xrow[src0..])
                                    .map(|(a, b)| a * b)
                                    .sum();
                                gw[(co * c_in + ci) * k + j] += s;
                            }
                        }
                    }
                }
                if self.rg(*x) {
                    let wd = self.value(*kernel).data();
                    let gx = self.grad_buf(*x, grads);
                    for co in 0..c_out {
                        let grow = &g[co * t_len..(co + 1) * t_len];
                        for ci in 0..c_in {
                            let gxrow = &mut gx[ci * t_len..(ci + 1) * t_len];
                            for j in 0..k {
                                let w = wd[(co * c_in + ci) * k + j];
                                let (t0, t1) = valid_range(j, pad, t_len);
                                let src0 = t0 + j - pad;
                                for (dst, &gv) in gxrow[src0..].iter_mut().zip(&grow[t0..t1]) {
                                    *dst += w * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let s = node.value.shape();
                let (c, t_len) = (s[0], s[1]);
                if self.rg(*bias) {
                    let gb = self.grad_buf(*bias, grads);
                    for ch in 0..c {
                        gb[ch] += g[ch * t_len..(ch + 1) * t_len].iter().sum::<f64>();
                    }
                }
                if self.rg(*gain) {
                    let gg = self.grad_buf(*gain, grads);
                    for ch in 0..c {
                        let r = ch * t_len..(ch + 1) * t_len;
                        gg[ch] += g[r.clone()]
                            .iter()
                            .zip(&normalized[r])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                if self.rg(*x) {
                    let gd = self.value(*gain).data();
                    // dx = inv_std · (ĝ − mean(ĝ) − x̂ · mean(ĝ · x̂)), ĝ = g · gain
                    let mut mean_g = vec![0.0; t_len];
                    let mut mean_gx = vec![0.0; t_len];
                    for ch in 0..c {
                        for t in 0..t_len {
                            let i = ch * t_len + t;
                            let gh = g[i] * gd[ch];
                            mean_g[t] += gh;
                            mean_gx[t] += gh * normalized[i];
                        }
                    }
                    let cf = c as f64;
                    let gx = self.grad_buf(*x, grads);
                    for ch in 0..c {
                        for t in 0..t_len {
                            let i = ch * t_len + t;
                            let gh = g[i] * gd[ch];
                            gx[i] += inv_std[t]
                                * (gh - mean_g[t] / cf - normalized[i] * mean_gx[t] / cf);
                        }
                    }
                }
            }
            Op::EmbedRows { table, ids } => {
                if self.rg(*table) {
                    let e = self.shape(*table)[1];
                    let t_len = ids.len();
                    let gt = self.grad_buf(*table, grads);
                    for (t, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            gt[id * e + j] += g[j * t_len + t];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        add_into(self.grad_buf(p, grads), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
        }
    }

    fn grad_buf<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

/// Output index range `[t0, t1)` whose source `t + j − pad` lies in `[0, T)`.
fn valid_range(j: usize, pad: usize, t_len: usize) -> (usize, usize) {
    let t0 = pad.saturating_sub(j);
    let t1 = (t_len + pad).saturating_sub(j).min(t_len);
    (t0.min(t1), t1)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
