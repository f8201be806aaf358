//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. Node indices are topologically ordered by construction, so
//! [`Graph::backward`] is a single sweep from the output towards the leaves.

use std::borrow::Cow;

use super::mask::AttendMask;
use super::tensor::{kernels, Tensor};
use super::NumericError;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    RelGather { x: Var, clip: usize },
    NllSum { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Tracked leaf that borrows its value instead of copying it.
    pub fn param_ref(&mut self, t: &'a Tensor) -> Var {
        self.push_node(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Constant leaf that borrows its value.
    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push_node(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Copy of a node's value with its gradient slot filled, if any.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone().into_owned();
        if let Some(g) = &self.grads[v.0] {
            t.set_grad(g.clone()).expect("gradient length");
        }
        t
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_node(Cow::Owned(value), op, requires_grad)
    }

    fn push_node(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize), NumericError> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(NumericError::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(NumericError::Shape(format!("matmul_bt [{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulBt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericError::Shape(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a length-`d` vector to every row of an `[m, d]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericError> {
        let (m, d) = self.dims(a)?;
        let r = self.value(row);
        if r.len() != d {
            return Err(NumericError::Shape(format!("add_row width {d} vs {}", r.len())));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, y) in data[i * d..(i + 1) * d].iter_mut().zip(r.data()) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::new(&[m, d], data)?, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericError::Shape(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|x| x * c).collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|x| x.max(0.0)).collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn masked_softmax(&mut self, logits: Var, mask: &AttendMask) -> Result<Var, NumericError> {
        let t = super::masked_softmax(self.value(logits), mask)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(t, Op::MaskedSoftmax(logits), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericError> {
        let (m, d) = self.dims(x)?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(NumericError::Shape(format!("layer_norm width {d}")));
        }
        if !(eps > 0.0) {
            return Err(NumericError::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let (mean, inv) = kernels::mean_inv_std(row, eps);
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let t = Tensor::new(&[m, d], out)?;
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericError> {
        let (rows, d) = self.dims(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumericError::InvalidArgument(format!("row {bad} out of {rows}")));
        }
        if ids.is_empty() {
            return Err(NumericError::Shape("gather of zero rows".into()));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        let t = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericError> {
        let (m, d) = self.dims(x)?;
        if len == 0 || start + len > d {
            return Err(NumericError::Shape(format!("columns {start}..{} of {d}", start + len)));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * d + start..i * d + start + len]);
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(&[m, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts.first().ok_or_else(|| NumericError::Shape("empty concat".into()))?;
        let (m, _) = self.dims(*first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(NumericError::Shape(format!("concat rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).data();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        let t = Tensor::new(&[m, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Expands per-offset scores `x[i, o]` (offsets `-clip..=clip`) into an
    /// `[n, m]` matrix with entry `(i, j)` read at offset `clamp(j - i)`.
    pub fn rel_gather(&mut self, x: Var, clip: usize, m: usize) -> Result<Var, NumericError> {
        let (n, w) = self.dims(x)?;
        if w != 2 * clip + 1 {
            return Err(NumericError::Shape(format!("relative width {w} for clip {clip}")));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = xv[i * w + rel_offset(i, j, clip)];
            }
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(t, Op::RelGather { x, clip }, rg))
    }

    /// Summed negative log-softmax probability of the targets; `None`
    /// targets are skipped. Returns the scalar node and the counted rows.
    pub fn nll_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<(Var, usize), NumericError> {
        let (m, v) = self.dims(logits)?;
        if targets.len() != m {
            return Err(NumericError::Shape(format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(NumericError::InvalidArgument(format!("target {bad} outside vocabulary {v}")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; m * v];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..m {
            let Some(t) = targets[i] else { continue };
            let row = &lv[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for j in 0..v {
                probs[i * v + j] = (row[j] - max).exp() / z;
            }
            total += z.ln() + max - row[t];
            count += 1;
        }
        let rg = self.rg(&[logits]);
        let node = self.push(Tensor::scalar(total), Op::NllSum { logits, targets: targets.to_vec(), probs }, rg);
        Ok((node, count))
    }

    /// Mean cross entropy over the rows whose `pad` flag is false.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad: &[bool]) -> Result<Var, NumericError> {
        if targets.len() != pad.len() {
            return Err(NumericError::Shape("targets and pad mask differ in length".into()));
        }
        let t: Vec<Option<usize>> = targets.iter().zip(pad).map(|(&t, &p)| (!p).then_some(t)).collect();
        let (sum, count) = self.nll_sum(logits, &t)?;
        if count == 0 {
            return Err(NumericError::EmptyLoss);
        }
        Ok(self.scale(sum, 1.0 / count as f64))
    }

    /// Fills gradient slots with d(output)/d(node) for every node that
    /// `output` depends on through tracked inputs.
    pub fn backward(&mut self, output: Var) -> Result<(), NumericError> {
        if self.backward_done {
            return Err(NumericError::BackwardTwice);
        }
        if self.value(output).len() != 1 {
            return Err(NumericError::Shape("backward needs a scalar output".into()));
        }
        self.backward_done = true;
        self.grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            propagate(&self.nodes, &mut self.grads, node, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Clears all gradient slots so that `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }
}

pub(crate) fn rel_offset(i: usize, j: usize, clip: usize) -> usize {
    let d = (j as i64 - i as i64).clamp(-(clip as i64), clip as i64);
    (d + clip as i64) as usize
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

fn propagate(nodes: &[Node<'_>], grads: &mut [Option<Vec<f64>>], node: &Node<'_>, g: &[f64]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a.0].value.dims2().unwrap();
            let n = nodes[b.0].value.dims2().unwrap().1;
            // dA = G·Bᵀ, dB = Aᵀ·G
            if let Some(ga) = slot(grads, nodes, *a) {
                kernels::matmul_bt(g, nodes[b.0].value.data(), ga, m, n, k);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                kernels::matmul_at(nodes[a.0].value.data(), g, gb, m, k, n);
            }
        }
        Op::MatMulBt(a, b) => {
            let (m, k) = nodes[a.0].value.dims2().unwrap();
            let n = nodes[b.0].value.dims2().unwrap().0;
            // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
            if let Some(ga) = slot(grads, nodes, *a) {
                kernels::matmul(g, nodes[b.0].value.data(), ga, m, n, k);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                kernels::matmul_at(g, nodes[a.0].value.data(), gb, m, n, k);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = slot(grads, nodes, *v) {
                    add_into(gv, g);
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gr) = slot(grads, nodes, *row) {
                let d = gr.len();
                for chunk in g.chunks(d) {
                    add_into(gr, chunk);
                }
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(a, b), (b, a)] {
                if let Some(gv) = slot(grads, nodes, *v) {
                    for ((x, y), o) in gv.iter_mut().zip(g).zip(nodes[other.0].value.data()) {
                        *x += y * o;
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
        }
        Op::Relu(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, y), av) in ga.iter_mut().zip(g).zip(nodes[a.0].value.data()) {
                    if *av > 0.0 {
                        *x += y;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::MaskedSoftmax(a) => {
            let y = node.value.data();
            let n = node.value.dims2().unwrap().1;
            if let Some(ga) = slot(grads, nodes, *a) {
                for (i, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        ga[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let d = nodes[gain.0].value.len();
            if let Some(gb) = slot(grads, nodes, *bias) {
                for chunk in g.chunks(d) {
                    add_into(gb, chunk);
                }
            }
            if let Some(gg) = slot(grads, nodes, *gain) {
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let gain = nodes[gain.0].value.data();
                let df = d as f64;
                let mut dh = vec![0.0; d];
                for (i, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for j in 0..d {
                        dh[j] = gr[j] * gain[j];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / df;
                    let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / df;
                    for j in 0..d {
                        gx[i * d + j] += inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            let d = node.value.dims2().unwrap().1;
            if let Some(gt) = slot(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::SliceCols { x, start } => {
            let (m, len) = node.value.dims2().unwrap();
            let d = nodes[x.0].value.dims2().unwrap().1;
            if let Some(gx) = slot(grads, nodes, *x) {
                for i in 0..m {
                    add_into(&mut gx[i * d + start..i * d + start + len], &g[i * len..(i + 1) * len]);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (m, total) = node.value.dims2().unwrap();
            let mut off = 0;
            for p in parts {
                let w = nodes[p.0].value.dims2().unwrap().1;
                if let Some(gp) = slot(grads, nodes, *p) {
                    for i in 0..m {
                        add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + off..i * total + off + w]);
                    }
                }
                off += w;
            }
        }
        Op::RelGather { x, clip } => {
            let (n, m) = node.value.dims2().unwrap();
            let w = 2 * clip + 1;
            if let Some(gx) = slot(grads, nodes, *x) {
                for i in 0..n {
                    for j in 0..m {
                        gx[i * w + rel_offset(i, j, *clip)] += g[i * m + j];
                    }
                }
            }
        }
        Op::NllSum { logits, targets, probs } => {
            let v = nodes[logits.0].value.dims2().unwrap().1;
            if let Some(gl) = slot(grads, nodes, *logits) {
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for j in 0..v {
                        gl[i * v + j] += g[0] * probs[i * v + j];
                    }
                    gl[i * v + t] -= g[0];
                }
            }
        }
    }
}
