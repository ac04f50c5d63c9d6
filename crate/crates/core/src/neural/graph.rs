//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every forward op together with the values it needs
//! for the backward sweep. Parameters enter the tape through
//! [`Graph::param`], which snapshots the current value from a
//! [`ParamStore`]; [`Graph::backward`] accumulates into that store's
//! gradient buffers. A graph that is never differentiated is simply
//! dropped, so inference uses the same ops without touching any gradient.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Weights of one LSTM cell: `w` is `[(I+H) × 4H]`, `b` is `[4H]`.
/// Gate column blocks are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    StackRows(Vec<Var>),
    Embed {
        table: Var,
        ids: Vec<u32>,
    },
    /// Output is `[B × 2H]`, the new hidden state followed by the new cell.
    LstmCell {
        gates: Var,
        c_prev: Var,
        act: Tensor,
        tanh_c: Tensor,
    },
    Blend {
        new: Var,
        old: Var,
        take_new: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        valid: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    Sum(Var),
    Scale(Var, f32),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.dims().to_vec(),
        right: b.dims().to_vec(),
    }
}

impl Graph {
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

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push("input", value, Op::Input, false)
    }

    /// Places a parameter on the tape. Repeated calls reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `x · w + b` for `x: [B×I]`, `w: [I×O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, inner, out) = (xv.rows(), xv.cols(), wv.cols());
        if wv.dims().len() != 2 || wv.rows() != inner {
            return Err(shape_err("linear", xv, wv));
        }
        let mut y = Tensor::zeros(&[rows, out]);
        gemm(rows, inner, out, xv.data(), false, wv.data(), false, y.data_mut(), 0.0);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(shape_err("linear", wv, bv));
            }
            for r in 0..rows {
                for (y, b) in y.data_mut()[r * out..(r + 1) * out].iter_mut().zip(bv.data()) {
                    *y += b;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push("linear", y, Op::Linear { x, w, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_vec(av.dims(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("add", t, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_vec(av.dims(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", t, Op::Mul(a, b), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::from_vec(av.dims(), av.data().iter().map(|x| x.tanh()).collect())?;
        let rg = self.rg(a);
        self.push("tanh", t, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::from_vec(av.dims(), av.data().iter().map(|&x| sigmoid(x)).collect())?;
        let rg = self.rg(a);
        self.push("sigmoid", t, Op::Sigmoid(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::from_vec(av.dims(), av.data().iter().map(|x| x * s).collect())?;
        let rg = self.rg(a);
        self.push("scale", t, Op::Scale(a, s), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f32 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::from_vec(&[rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: xv.dims().to_vec(),
                right: vec![start, end],
            });
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        let t = Tensor::from_vec(&[rows, end - start], out)?;
        let rg = self.rg(x);
        self.push("slice_cols", t, Op::SliceCols { x, start }, rg)
    }

    /// Row-wise stacking of tensors with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("stack_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let t = Tensor::from_vec(&[rows, cols], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("stack_rows", t, Op::StackRows(parts.to_vec()), rg)
    }

    /// Gathers rows of `table` (`[V × E]`) for each id.
    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tv = self.value(table);
        let (v, e) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::TokenId { id, size: v });
            }
            out.extend_from_slice(tv.row(id as usize));
        }
        let t = Tensor::from_vec(&[ids.len(), e], out)?;
        let rg = self.rg(table);
        self.push(
            "embed",
            t,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Pointwise LSTM update from pre-activation gates `[B × 4H]` and the
    /// previous cell `[B × H]`. Returns a `[B × 2H]` node holding `h | c`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (gv, cv) = (self.value(gates), self.value(c_prev));
        let (b, h) = (cv.rows(), cv.cols());
        if gv.rows() != b || gv.cols() != 4 * h {
            return Err(shape_err("lstm_cell", gv, cv));
        }
        let mut act = Tensor::zeros(&[b, 4 * h]);
        let mut tanh_c = Tensor::zeros(&[b, h]);
        let mut out = Tensor::zeros(&[b, 2 * h]);
        for r in 0..b {
            let g = gv.row(r);
            let a = &mut act.data_mut()[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                a[j] = sigmoid(g[j]);
                a[h + j] = sigmoid(g[h + j]);
                a[2 * h + j] = g[2 * h + j].tanh();
                a[3 * h + j] = sigmoid(g[3 * h + j]);
            }
            let cp = cv.row(r);
            let o = &mut out.data_mut()[r * 2 * h..(r + 1) * 2 * h];
            let tc = &mut tanh_c.data_mut()[r * h..(r + 1) * h];
            for j in 0..h {
                let c = a[h + j] * cp[j] + a[j] * a[2 * h + j];
                tc[j] = c.tanh();
                o[j] = a[3 * h + j] * tc[j];
                o[h + j] = c;
            }
        }
        let rg = self.rg(gates) || self.rg(c_prev);
        self.push(
            "lstm_cell",
            out,
            Op::LstmCell {
                gates,
                c_prev,
                act,
                tanh_c,
            },
            rg,
        )
    }

    /// One LSTM step: returns `(h_t, c_t)`.
    pub fn lstm_step(&mut self, x: Var, h_prev: Var, c_prev: Var, weights: LstmWeights) -> Result<(Var, Var)> {
        let hidden = self.value(h_prev).cols();
        let xh = self.concat_cols(&[x, h_prev])?;
        let gates = self.linear(xh, weights.w, Some(weights.b))?;
        let hc = self.lstm_cell(gates, c_prev)?;
        let h = self.slice_cols(hc, 0, hidden)?;
        let c = self.slice_cols(hc, hidden, 2 * hidden)?;
        Ok((h, c))
    }

    /// Row-wise select: row `r` comes from `new` if `take_new[r]`, else from `old`.
    pub fn blend(&mut self, new: Var, old: Var, take_new: &[bool]) -> Result<Var> {
        let (nv, ov) = (self.value(new), self.value(old));
        if nv.dims() != ov.dims() || nv.rows() != take_new.len() {
            return Err(shape_err("blend", nv, ov));
        }
        let cols = nv.cols();
        let mut out = Vec::with_capacity(nv.len());
        for (r, &t) in take_new.iter().enumerate() {
            out.extend_from_slice(if t { nv.row(r) } else { ov.row(r) });
        }
        let t = Tensor::from_vec(&[take_new.len(), cols], out)?;
        let rg = self.rg(new) || self.rg(old);
        self.push(
            "blend",
            t,
            Op::Blend {
                new,
                old,
                take_new: take_new.to_vec(),
            },
            rg,
        )
    }

    /// Mean over valid rows of `-log softmax(logits)[target]`, as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[u32], valid: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, v) = (lv.rows(), lv.cols());
        if targets.len() != n || valid.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: lv.dims().to_vec(),
                right: vec![targets.len(), valid.len()],
            });
        }
        let count = valid.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Invalid("cross-entropy over zero unmasked positions".into()));
        }
        let mut probs = Tensor::zeros(&[n, v]);
        let mut total = 0.0f64;
        for r in 0..n {
            if !valid[r] {
                continue;
            }
            let t = targets[r] as usize;
            if t >= v {
                return Err(Error::TokenId { id: targets[r], size: v });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let p = &mut probs.data_mut()[r * v..(r + 1) * v];
            let mut z = 0.0f32;
            for (p, &x) in p.iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            p.iter_mut().for_each(|p| *p /= z);
            total += (z.ln() - (row[t] - max)) as f64;
        }
        let loss = Tensor::scalar((total / count as f64) as f32);
        let rg = self.rg(logits);
        self.push(
            "softmax_cross_entropy",
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                valid: valid.to_vec(),
                probs,
                count,
            },
            rg,
        )
    }

    /// Accumulates `d loss / d param` into `store` for every parameter on
    /// the tape. Gradients add to whatever the store already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoGraph);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.value(loss).dims().to_vec(),
                right: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).dims(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let dst = store.grad_mut(*id);
                    if dst.dims() != g.dims() {
                        return Err(shape_err("backward(param)", dst, &g));
                    }
                    dst.add_assign(&g);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (rows, inner, out) = (xv.rows(), xv.cols(), wv.cols());
                    if self.rg(*x) {
                        let dx = self.grad_buf(&mut grads, *x);
                        gemm(rows, out, inner, g.data(), false, wv.data(), true, dx.data_mut(), 1.0);
                    }
                    if self.rg(*w) {
                        let dw = self.grad_buf(&mut grads, *w);
                        gemm(inner, rows, out, xv.data(), true, g.data(), false, dw.data_mut(), 1.0);
                    }
                    if let Some(b) = b.filter(|&b| self.rg(b)) {
                        let db = self.grad_buf(&mut grads, b);
                        let db = db.data_mut();
                        for r in 0..rows {
                            for (d, gv) in db.iter_mut().zip(g.row(r)) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            self.grad_buf(&mut grads, v).add_assign(&g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if self.rg(v) {
                            let ov = self.value(other).data();
                            let d = self.grad_buf(&mut grads, v).data_mut();
                            for ((d, gv), o) in d.iter_mut().zip(g.data()).zip(ov) {
                                *d += gv * o;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d = self.grad_buf(&mut grads, *a).data_mut();
                    for ((d, gv), y) in d.iter_mut().zip(g.data()).zip(y) {
                        *d += gv * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d = self.grad_buf(&mut grads, *a).data_mut();
                    for ((d, gv), y) in d.iter_mut().zip(g.data()).zip(y) {
                        *d += gv * y * (1.0 - y);
                    }
                }
                Op::Scale(a, s) => {
                    let d = self.grad_buf(&mut grads, *a).data_mut();
                    for (d, gv) in d.iter_mut().zip(g.data()) {
                        *d += gv * s;
                    }
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    let d = self.grad_buf(&mut grads, *a).data_mut();
                    d.iter_mut().for_each(|d| *d += gv);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.rg(p) {
                            let d = self.grad_buf(&mut grads, p).data_mut();
                            for r in 0..rows {
                                let src = &g.row(r)[offset..offset + pc];
                                for (d, s) in d[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xc = self.value(*x).cols();
                    let w = g.cols();
                    let d = self.grad_buf(&mut grads, *x).data_mut();
                    for r in 0..g.rows() {
                        let dst = &mut d[r * xc + start..r * xc + start + w];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.rg(p) {
                            let d = self.grad_buf(&mut grads, p).data_mut();
                            for (d, s) in d.iter_mut().zip(&g.data()[offset..offset + n]) {
                                *d += s;
                            }
                        }
                        offset += n;
                    }
                }
                Op::Embed { table, ids } => {
                    let e = g.cols();
                    let d = self.grad_buf(&mut grads, *table).data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut d[id as usize * e..(id as usize + 1) * e];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
                Op::LstmCell {
                    gates,
                    c_prev,
                    act,
                    tanh_c,
                } => {
                    let cp = self.value(*c_prev);
                    let (b, h) = (cp.rows(), cp.cols());
                    let mut dgates = Tensor::zeros(&[b, 4 * h]);
                    let mut dcp = Tensor::zeros(&[b, h]);
                    for r in 0..b {
                        let gr = g.row(r);
                        let a = act.row(r);
                        let tc = tanh_c.row(r);
                        let cpr = cp.row(r);
                        let dg = &mut dgates.data_mut()[r * 4 * h..(r + 1) * 4 * h];
                        let dc_out = &mut dcp.data_mut()[r * h..(r + 1) * h];
                        for j in 0..h {
                            let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                            let dh = gr[j];
                            let dc = gr[h + j] + dh * o * (1.0 - tc[j] * tc[j]);
                            dg[j] = dc * gg * i * (1.0 - i);
                            dg[h + j] = dc * cpr[j] * f * (1.0 - f);
                            dg[2 * h + j] = dc * i * (1.0 - gg * gg);
                            dg[3 * h + j] = dh * tc[j] * o * (1.0 - o);
                            dc_out[j] = dc * f;
                        }
                    }
                    if self.rg(*gates) {
                        self.grad_buf(&mut grads, *gates).add_assign(&dgates);
                    }
                    if self.rg(*c_prev) {
                        self.grad_buf(&mut grads, *c_prev).add_assign(&dcp);
                    }
                }
                Op::Blend { new, old, take_new } => {
                    let cols = g.cols();
                    for (v, pick) in [(*new, true), (*old, false)] {
                        if !self.rg(v) {
                            continue;
                        }
                        let d = self.grad_buf(&mut grads, v).data_mut();
                        for (r, &t) in take_new.iter().enumerate() {
                            if t == pick {
                                for (d, s) in d[r * cols..(r + 1) * cols].iter_mut().zip(g.row(r)) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    valid,
                    probs,
                    count,
                } => {
                    let scale = g.item() / *count as f32;
                    let v = probs.cols();
                    let d = self.grad_buf(&mut grads, *logits).data_mut();
                    for (r, &ok) in valid.iter().enumerate() {
                        if !ok {
                            continue;
                        }
                        let dst = &mut d[r * v..(r + 1) * v];
                        for (d, p) in dst.iter_mut().zip(probs.row(r)) {
                            *d += scale * p;
                        }
                        dst[targets[r] as usize] -= scale;
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.dims()))
    }
}
