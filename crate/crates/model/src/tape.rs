//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed, never copied; [`Tape::backward`] accumulates their gradients
//! into a [`Grads`] buffer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

pub type Var = usize;

/// A contiguous run of rows belonging to one sequence of a stacked batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    /// Back-to-back segments for the given lengths.
    pub fn stack(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .into_iter()
            .map(|len| {
                let seg = Segment { start, len };
                start += len;
                seg
            })
            .collect()
    }
}

struct Attention {
    q: Var,
    k: Var,
    v: Var,
    q_segs: Vec<Segment>,
    k_segs: Vec<Segment>,
    heads: usize,
    causal: bool,
    /// Attention weights per (segment, head), row-major in that order.
    probs: Vec<Array2<f64>>,
}

enum Op {
    Const,
    Param(usize),
    Gather { param: usize, ids: Vec<usize> },
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { a: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    Attention(Box<Attention>),
    CrossEntropy { logits: Var, targets: Vec<u32>, probs: Array2<f64>, scale: f64, smoothing: f64 },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of every parameter, `None` where a parameter was unused.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Grads(vec![None; n_params])
    }

    fn add(&mut self, param: usize, delta: ArrayView2<f64>) {
        match &mut self.0[param] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta.to_owned()),
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: Grads) {
        for (mine, theirs) in self.0.iter_mut().zip(other.0) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => *a += &b,
                (None, Some(b)) => *mine = Some(b),
                _ => {}
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }
}

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    relu_signature: u64,
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            relu_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match (&self.nodes[v].value, &self.nodes[v].op) {
            (Some(x), _) => x,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    /// Hash of the sign pattern of every ReLU input seen so far.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Const, needs_grad: false });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(index), needs_grad: true });
        let v = self.nodes.len() - 1;
        self.param_vars[index] = Some(v);
        v
    }

    /// Rows `ids` of parameter `param`.
    pub fn gather(&mut self, param: usize, ids: &[u32]) -> Var {
        let table = &self.params[param];
        let mut out = Array2::zeros((ids.len(), table.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(id as usize));
        }
        let ids = ids.iter().map(|&i| i as usize).collect();
        self.nodes.push(Node { value: Some(out), op: Op::Gather { param, ids }, needs_grad: true });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// `a + b` with the single row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).nrows(), 1);
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).nrows(), 1);
        let out = self.value(a) * self.value(b);
        self.push(out, Op::MulRow(a, b), &[a, b])
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut sig = self.relu_signature;
        for &v in x.iter() {
            sig = (sig ^ u64::from(v > 0.0)).wrapping_mul(0x0100_0000_01b3);
        }
        let out = x.mapv(|v| v.max(0.0));
        self.relu_signature = sig;
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise standardization without gain or bias.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            *inv = 1.0 / (var + LN_EPS).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| (v - mean) * s);
        }
        let out = xhat.clone();
        self.push(out, Op::LayerNorm { a, xhat, inv_std }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start, end), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, end), &[a])
    }

    /// Multi-head scaled dot-product attention over stacked sequences.
    ///
    /// Query segment `i` attends only to key segment `i`. With `causal`,
    /// query row `r` of a segment sees key rows `0..=r` of its segment.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_segs: &[Segment],
        k_segs: &[Segment],
        heads: usize,
        causal: bool,
    ) -> Var {
        assert_eq!(q_segs.len(), k_segs.len());
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qm.nrows(), d));
        let mut probs = Vec::with_capacity(q_segs.len() * heads);
        for (qs, ks) in q_segs.iter().zip(k_segs) {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qm.slice(s![qs.start..qs.start + qs.len, cols.clone()]);
                let kh = km.slice(s![ks.start..ks.start + ks.len, cols.clone()]);
                let vh = vm.slice(s![ks.start..ks.start + ks.len, cols.clone()]);
                let mut p = qh.dot(&kh.t());
                p.mapv_inplace(|x| x * scale);
                for (r, mut row) in p.rows_mut().into_iter().enumerate() {
                    let row = row.as_slice_mut().expect("contiguous row");
                    if causal {
                        softmax_in_place(&mut row[..=r.min(ks.len - 1)]);
                        row.iter_mut().skip(r + 1).for_each(|x| *x = 0.0);
                    } else {
                        softmax_in_place(row);
                    }
                }
                out.slice_mut(s![qs.start..qs.start + qs.len, cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let cache = Attention { q, k, v, q_segs: q_segs.to_vec(), k_segs: k_segs.to_vec(), heads, causal, probs };
        self.push(out, Op::Attention(Box::new(cache)), &[q, k, v])
    }

    /// Attention weights recorded by an attention node, per (segment, head).
    pub fn attention_weights(&self, v: Var) -> Option<&[Array2<f64>]> {
        match &self.nodes[v].op {
            Op::Attention(a) => Some(&a.probs),
            _ => None,
        }
    }

    /// `scale · Σ_t NLL(row t, target t)` over rows whose target is not
    /// `pad`. With `smoothing` ε the per-row loss is
    /// `(1-ε)·NLL + ε·mean_j(-log p_j)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], pad: u32, scale: f64, smoothing: f64) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len());
        let vocab = x.ncols() as f64;
        let mut probs = x.clone();
        let mut total = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let row = row.as_slice_mut().expect("contiguous row");
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if t != pad {
                let nll = lse - row[t as usize];
                let uniform = if smoothing > 0.0 { lse - row.iter().sum::<f64>() / vocab } else { 0.0 };
                total += (1.0 - smoothing) * nll + smoothing * uniform;
            }
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let out = Array2::from_elem((1, 1), total * scale);
        let targets = targets.iter().map(|&t| if t == pad { u32::MAX } else { t }).collect();
        self.push(out, Op::CrossEntropy { logits, targets, probs, scale, smoothing }, &[logits])
    }

    /// Back-propagates from the scalar node `out` (seed gradient 1).
    pub fn backward(&self, out: Var, grads: &mut Grads) {
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out] = Some(Array2::ones(self.value(out).raw_dim()));
        for v in (0..=out).rev() {
            let Some(gv) = g[v].take() else { continue };
            if !self.nodes[v].needs_grad {
                continue;
            }
            self.backprop_node(v, gv, &mut g, grads);
        }
    }

    fn backprop_node(&self, v: Var, gv: Array2<f64>, g: &mut [Option<Array2<f64>>], grads: &mut Grads) {
        let mut acc = |target: Var, delta: Array2<f64>| {
            if !self.nodes[target].needs_grad {
                return;
            }
            match &mut g[target] {
                Some(x) => *x += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[v].op {
            Op::Const => {}
            Op::Param(i) => grads.add(*i, gv.view()),
            Op::Gather { param, ids } => {
                let mut delta = Array2::zeros(self.params[*param].raw_dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = delta.row_mut(id);
                    row += &gv.row(r);
                }
                grads.add(*param, delta.view());
            }
            Op::MatMul(a, b) => {
                acc(*a, gv.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(&gv));
            }
            Op::MatMulT(a, b) => {
                acc(*a, gv.dot(self.value(*b)));
                acc(*b, gv.t().dot(self.value(*a)));
            }
            Op::Transpose(a) => acc(*a, gv.t().to_owned()),
            Op::Add(a, b) => {
                acc(*b, gv.clone());
                acc(*a, gv);
            }
            Op::AddRow(a, b) => {
                acc(*b, gv.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*a, gv);
            }
            Op::Mul(a, b) => {
                acc(*a, &gv * self.value(*b));
                acc(*b, &gv * self.value(*a));
            }
            Op::MulRow(a, b) => {
                acc(*b, (&gv * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*a, &gv * self.value(*b));
            }
            Op::MulConst(a, c) => acc(*a, &gv * c),
            Op::Scale(a, f) => acc(*a, gv * *f),
            Op::Relu(a) => {
                let mut d = gv;
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = gv;
                Zip::from(&mut d).and(self.value(v)).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = gv;
                Zip::from(&mut d).and(self.value(v)).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => acc(*a, softmax_backward(self.value(v), &gv)),
            Op::LayerNorm { a, xhat, inv_std } => {
                let n = xhat.ncols() as f64;
                let mut d = Array2::zeros(xhat.raw_dim());
                for r in 0..xhat.nrows() {
                    let gr = gv.row(r);
                    let xr = xhat.row(r);
                    let sum_g = gr.sum();
                    let sum_gx = gr.dot(&xr);
                    let inv = inv_std[r];
                    Zip::from(d.row_mut(r))
                        .and(&gr)
                        .and(&xr)
                        .for_each(|d, &g, &x| *d = inv / n * (n * g - sum_g - x * sum_gx));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, gv.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(&gv);
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(p, gv.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*end, ..]).assign(&gv);
                acc(*a, d);
            }
            Op::Attention(att) => {
                let (dq, dk, dv) = self.attention_backward(att, &gv);
                acc(att.q, dq);
                acc(att.k, dk);
                acc(att.v, dv);
            }
            Op::CrossEntropy { logits, targets, probs, scale, smoothing } => {
                let upstream = gv[[0, 0]] * scale;
                let vocab = probs.ncols() as f64;
                let mut d = probs.clone();
                for (mut row, &t) in d.rows_mut().into_iter().zip(targets) {
                    if t == u32::MAX {
                        row.fill(0.0);
                        continue;
                    }
                    if *smoothing > 0.0 {
                        row.mapv_inplace(|p| p - smoothing / vocab);
                    }
                    row[t as usize] -= 1.0 - smoothing;
                    row.mapv_inplace(|x| x * upstream);
                }
                acc(*logits, d);
            }
        }
    }

    fn attention_backward(&self, att: &Attention, gv: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (qm, km, vm) = (self.value(att.q), self.value(att.k), self.value(att.v));
        let d = qm.ncols();
        let dh = d / att.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(qm.raw_dim());
        let mut dk = Array2::zeros(km.raw_dim());
        let mut dv = Array2::zeros(vm.raw_dim());
        let mut probs = att.probs.iter();
        for (qs, ks) in att.q_segs.iter().zip(&att.k_segs) {
            let q_rows = qs.start..qs.start + qs.len;
            let k_rows = ks.start..ks.start + ks.len;
            for h in 0..att.heads {
                let p = probs.next().expect("one probability block per segment and head");
                let cols = h * dh..(h + 1) * dh;
                let go = gv.slice(s![q_rows.clone(), cols.clone()]);
                let qh = qm.slice(s![q_rows.clone(), cols.clone()]);
                let kh = km.slice(s![k_rows.clone(), cols.clone()]);
                let vh = vm.slice(s![k_rows.clone(), cols.clone()]);
                let mut dvh = dv.slice_mut(s![k_rows.clone(), cols.clone()]);
                dvh += &p.t().dot(&go);
                let dp = go.dot(&vh.t());
                let mut ds = softmax_backward(p, &dp);
                ds.mapv_inplace(|x| x * scale);
                let mut dqh = dq.slice_mut(s![q_rows.clone(), cols.clone()]);
                dqh += &ds.dot(&kh);
                let mut dkh = dk.slice_mut(s![k_rows.clone(), cols]);
                dkh += &ds.t().dot(&qh);
            }
        }
        debug_assert!(!att.causal || att.q_segs.iter().zip(&att.k_segs).all(|(q, k)| q.len <= k.len));
        (dq, dk, dv)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Gradient of row-wise softmax given its output `y` and upstream `g`.
fn softmax_backward(y: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut d = y * g;
    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
        let dot = drow.sum();
        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y * dot);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&[Array2<f64>]) -> f64, params: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let h = 1e-6;
        let mut out = Vec::new();
        for i in 0..params.len() {
            let mut g = Array2::zeros(params[i].raw_dim());
            for idx in 0..params[i].len() {
                let mut p = params.to_vec();
                let (r, c) = (idx / params[i].ncols(), idx % params[i].ncols());
                p[i][[r, c]] += h;
                let up = f(&p);
                p[i][[r, c]] -= 2.0 * h;
                let down = f(&p);
                g[[r, c]] = (up - down) / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    fn check(f: impl Fn(&mut Tape) -> Var + Copy, params: &[Array2<f64>]) {
        let mut tape = Tape::new(params);
        let out = f(&mut tape);
        let mut grads = Grads::new(params.len());
        tape.backward(out, &mut grads);
        let numeric = numeric_grad(
            |p| {
                let mut t = Tape::new(p);
                let o = f(&mut t);
                t.value(o)[[0, 0]]
            },
            params,
        );
        for (a, n) in grads.0.iter().zip(&numeric) {
            let a = a.clone().unwrap_or_else(|| Array2::zeros(n.raw_dim()));
            for (x, y) in a.iter().zip(n.iter()) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "analytic {x} vs numeric {y}");
            }
        }
    }

    fn sum_all(t: &mut Tape, v: Var) -> Var {
        let n = t.value(v).ncols();
        let r = t.value(v).nrows();
        let ones_r = t.constant(Array2::ones((1, r)));
        let ones_c = t.constant(Array2::ones((n, 1)));
        let s = t.matmul(ones_r, v);
        t.matmul(s, ones_c)
    }

    fn params() -> Vec<Array2<f64>> {
        vec![
            array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]],
            array![[0.7, -0.1], [0.2, 0.9], [-0.3, 0.5]],
            array![[0.05, -0.15, 0.25]],
            array![[0.5, -0.4, 0.3, 0.2], [-0.1, 0.6, 0.8, -0.7], [0.3, 0.1, -0.2, 0.4], [0.9, -0.5, 0.2, 0.1]],
        ]
    }

    #[test]
    fn elementwise_ops() {
        check(
            |t| {
                let a = t.param(0);
                let b = t.param(1);
                let bias = t.param(2);
                let m = t.matmul(a, b);
                let m = t.matmul_t(m, m);
                let m = t.tanh(m);
                let x = t.matmul(m, a);
                let x = t.add_row(x, bias);
                let y = t.sigmoid(x);
                let z = t.mul_row(y, bias);
                let z = t.mul(z, x);
                let z = t.relu(z);
                let w = t.layer_norm(x);
                let w = t.softmax_rows(w);
                let c = t.concat_cols(&[z, w]);
                let c = t.slice_cols(c, 1, 5);
                let r = t.concat_rows(&[c, c]);
                let r = t.slice_rows(r, 1, 3);
                let r = t.transpose(r);
                let r = t.scale(r, 0.7);
                sum_all(t, r)
            },
            &params(),
        );
    }

    #[test]
    fn gather_and_cross_entropy() {
        check(
            |t| {
                let e = t.gather(1, &[2, 0, 2]);
                let a = t.param(0);
                let logits = t.matmul(e, a);
                t.cross_entropy(logits, &[1, 0, 2], 0, 0.5, 0.1)
            },
            &params(),
        );
    }

    #[test]
    fn attention_matches_numeric() {
        for causal in [false, true] {
            check(
                move |t| {
                    let x = t.param(3);
                    let k = t.param(3);
                    let segs = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 1 }];
                    let q = t.scale(x, 1.3);
                    let o = t.attention(q, k, x, &segs, &segs, 2, causal);
                    let o = t.tanh(o);
                    sum_all(t, o)
                },
                &params(),
            );
        }
    }

    #[test]
    fn causal_rows_ignore_future_keys() {
        let p = params();
        let mut t = Tape::new(&p);
        let x = t.param(3);
        let segs = [Segment { start: 0, len: 4 }];
        let o = t.attention(x, x, x, &segs, &segs, 1, true);
        let w = t.attention_weights(o).unwrap();
        for r in 0..4 {
            assert!((w[0].row(r).sum() - 1.0).abs() < 1e-12);
            for c in r + 1..4 {
                assert_eq!(w[0][[r, c]], 0.0);
            }
        }
    }
}
