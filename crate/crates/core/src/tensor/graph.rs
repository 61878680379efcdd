use super::linalg::{col2im, gemm, im2col};
use super::{mismatch, ParamId, ParameterStore, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    StopGrad,
    /// Value of `zq`, gradient routed to `z`.
    StraightThrough { z: usize },
    AddChannelBias(usize, usize),
    AddColBias(usize, usize),
    Conv1d { x: usize, w: usize, stride: usize, pad: usize },
    ConvT1d { x: usize, w: usize, stride: usize, pad: usize },
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    CausalSoftmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Embedding { table: usize, ids: Vec<usize> },
    Mse(usize, usize),
    CrossEntropy { logits: usize, targets: Vec<Option<usize>> },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape. Nodes only reference earlier nodes, so the recorded
/// order is already topological.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Total gradient for a store parameter, summed over every node that
    /// read it. `None` if no path reached it.
    pub fn param(&self, id: ParamId) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for &(node, pid) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match &mut out {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    pub(crate) fn param_entries(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(node, pid)| self.grads[node].as_deref().map(|g| (pid, g)))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn two_d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    if t.shape().len() != 2 {
        return Err(mismatch(op, format!("expected 2-D, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn conv_dims(op: &'static str, x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize, usize), TensorError> {
    let (c, l) = two_d(op, x)?;
    if w.shape().len() != 3 {
        return Err(mismatch(op, format!("kernel must be 3-D, got {:?}", w.shape())));
    }
    let (a, b, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    Ok((c, l, a, b, k))
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Reads a parameter from the store. Frozen parameters act as constants.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !p.frozen)
    }

    pub fn param_named(&mut self, store: &ParameterStore, name: &str) -> Result<Var, TensorError> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: fn(usize, usize) -> Op) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, mk(a.0, b.0), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i] * s);
        let ng = self.ng(a.0);
        self.push(value, Op::Scale(a.0, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i].max(0.0));
        let ng = self.ng(a.0);
        self.push(value, Op::Relu(a.0), ng)
    }

    /// Passes the value through and blocks the gradient.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad, false)
    }

    /// Forward value of `zq`, backward gradient delivered to `z` unchanged.
    pub fn straight_through(&mut self, z: Var, zq: Var) -> Result<Var, TensorError> {
        same_shape("straight_through", self.value(z), self.value(zq))?;
        let value = self.value(zq).clone();
        let ng = self.ng(z.0);
        Ok(self.push(value, Op::StraightThrough { z: z.0 }, ng))
    }

    /// `x (C, L) + b[c]` on every column.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (c, l) = two_d("add_channel_bias", self.value(x))?;
        if self.value(b).len() != c {
            return Err(mismatch("add_channel_bias", format!("{c} channels, bias {:?}", self.value(b).shape())));
        }
        let (tx, tb) = (self.value(x), self.value(b));
        let value = Tensor::from_fn(&[c, l], |i| tx.data()[i] + tb.data()[i / l]);
        let ng = self.ng(x.0) || self.ng(b.0);
        Ok(self.push(value, Op::AddChannelBias(x.0, b.0), ng))
    }

    /// `x (R, C) + b[c]` on every row.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c) = two_d("add_col_bias", self.value(x))?;
        if self.value(b).len() != c {
            return Err(mismatch("add_col_bias", format!("{c} columns, bias {:?}", self.value(b).shape())));
        }
        let (tx, tb) = (self.value(x), self.value(b));
        let value = Tensor::from_fn(&[r, c], |i| tx.data()[i] + tb.data()[i % c]);
        let ng = self.ng(x.0) || self.ng(b.0);
        Ok(self.push(value, Op::AddColBias(x.0, b.0), ng))
    }

    /// 1-D cross-correlation of `x (C_in, L)` with `w (C_out, C_in, K)`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (cin, l, cout, wcin, k) = conv_dims("conv1d", self.value(x), self.value(w))?;
        if wcin != cin || stride == 0 || k == 0 || k > l + 2 * pad {
            return Err(mismatch(
                "conv1d",
                format!("x {:?}, kernel {:?}, stride {stride}, pad {pad}", self.value(x).shape(), self.value(w).shape()),
            ));
        }
        let lout = (l + 2 * pad - k) / stride + 1;
        let cols = im2col(self.value(x).data(), cin, l, k, stride, pad, lout);
        let mut out = vec![0.0; cout * lout];
        gemm(cout, cin * k, lout, self.value(w).data(), false, &cols, false, 0.0, &mut out);
        let ng = self.ng(x.0) || self.ng(w.0);
        Ok(self.push(Tensor::new(vec![cout, lout], out)?, Op::Conv1d { x: x.0, w: w.0, stride, pad }, ng))
    }

    /// Transposed convolution of `x (C_in, L)` with `w (C_in, C_out, K)`;
    /// the adjoint of [`Graph::conv1d`] with the same kernel tensor.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (cin, l, wcin, cout, k) = conv_dims("conv_transpose1d", self.value(x), self.value(w))?;
        if wcin != cin || stride == 0 || k == 0 || l == 0 || (l - 1) * stride + k <= 2 * pad {
            return Err(mismatch(
                "conv_transpose1d",
                format!("x {:?}, kernel {:?}, stride {stride}, pad {pad}", self.value(x).shape(), self.value(w).shape()),
            ));
        }
        let lo = (l - 1) * stride + k - 2 * pad;
        let mut cols = vec![0.0; cout * k * l];
        gemm(cout * k, cin, l, self.value(w).data(), true, self.value(x).data(), false, 0.0, &mut cols);
        let out = col2im(&cols, cout, lo, k, stride, pad, l);
        let ng = self.ng(x.0) || self.ng(w.0);
        Ok(self.push(Tensor::new(vec![cout, lo], out)?, Op::ConvT1d { x: x.0, w: w.0, stride, pad }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let (ar, ac) = two_d("matmul", self.value(a))?;
        let (br, bc) = two_d("matmul", self.value(b))?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, 0.0, &mut out);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a: a.0, b: b.0, ta, tb }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        two_d("transpose", self.value(a))?;
        let value = self.value(a).transpose();
        let ng = self.ng(a.0);
        Ok(self.push(value, Op::Transpose(a.0), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = two_d("slice_cols", self.value(x))?;
        if start + len > c {
            return Err(mismatch("slice_cols", format!("{start}+{len} > {c}")));
        }
        let t = self.value(x);
        let value = Tensor::from_fn(&[r, len], |i| t.data()[(i / len) * c + start + i % len]);
        let ng = self.ng(x.0);
        Ok(self.push(value, Op::SliceCols { x: x.0, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(mismatch("concat_cols", "no inputs"));
        }
        let r = two_d("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = two_d("concat_cols", self.value(*p))?;
            if pr != r {
                return Err(mismatch("concat_cols", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[row * w..(row + 1) * w]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(Tensor::new(vec![r, total], data)?, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(mismatch("concat_rows", "no inputs"));
        }
        let c = two_d("concat_rows", self.value(parts[0]))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pr, pc) = two_d("concat_rows", self.value(*p))?;
            if pc != c {
                return Err(mismatch("concat_rows", format!("column counts {c} vs {pc}")));
            }
            rows += pr;
            data.extend_from_slice(self.value(*p).data());
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), ng))
    }

    /// Row-wise softmax of a square score matrix where row `i` only sees
    /// columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = two_d("causal_softmax", self.value(x))?;
        if r != c {
            return Err(mismatch("causal_softmax", format!("{r}x{c} is not square")));
        }
        let t = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t[i * c..i * c + i + 1];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out[i * c + j] = e;
                s += e;
            }
            for v in &mut out[i * c..i * c + i + 1] {
                *v /= s;
            }
        }
        let ng = self.ng(x.0);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::CausalSoftmax(x.0), ng))
    }

    /// Per-row normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (r, c) = two_d("layer_norm", self.value(x))?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(mismatch("layer_norm", format!("width {c}")));
        }
        let (t, g, b) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t[i * c..(i + 1) * c];
            let (mu, inv) = row_stats(row);
            for j in 0..c {
                out[i * c + j] = g[j] * (row[j] - mu) * inv + b[j];
            }
        }
        let ng = self.ng(x.0) || self.ng(gamma.0) || self.ng(beta.0);
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            ng,
        ))
    }

    /// Gathers rows of `table (N, D)` into a `(ids.len(), D)` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (n, d) = two_d("embedding", self.value(table))?;
        if let Some(bad) = ids.iter().find(|&&i| i >= n) {
            return Err(mismatch("embedding", format!("id {bad} outside table of {n}")));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let ng = self.ng(table.0);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mse", ta, tb)?;
        let n = ta.len().max(1) as f64;
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a.0, b.0), ng))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits (T, V)`. `None` targets are ignored and get zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, TensorError> {
        let (r, v) = two_d("cross_entropy", self.value(logits))?;
        if targets.len() != r {
            return Err(mismatch("cross_entropy", format!("{r} rows, {} targets", targets.len())));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(mismatch("cross_entropy", format!("target {bad} outside vocab {v}")));
        }
        let t = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, tgt) in targets.iter().enumerate() {
            if let Some(tgt) = tgt {
                let row = &t[i * v..(i + 1) * v];
                total += log_sum_exp(row) - row[*tgt];
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(logits.0);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(v), Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(v), Op::Mean(a.0), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.nodes[..n]
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match node.op {
                Op::Param(id) if node.needs_grad => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], idx: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        let slot = grads[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Input | Op::Param(_) | Op::StopGrad => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |s| add_into(s, g));
                self.acc(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |s| add_into(s, g));
                self.acc(grads, *b, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                self.acc(grads, *b, |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Scale(a, f) => self.acc(grads, *a, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += f * y)),
            Op::Relu(a) => {
                let va = val(*a);
                self.acc(grads, *a, |s| {
                    for k in 0..s.len() {
                        if va[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::StraightThrough { z } => self.acc(grads, *z, |s| add_into(s, g)),
            Op::AddChannelBias(x, b) => {
                let l = node.value.cols();
                self.acc(grads, *x, |s| add_into(s, g));
                self.acc(grads, *b, |s| {
                    for (k, v) in g.iter().enumerate() {
                        s[k / l] += v;
                    }
                });
            }
            Op::AddColBias(x, b) => {
                let c = node.value.cols();
                self.acc(grads, *x, |s| add_into(s, g));
                self.acc(grads, *b, |s| {
                    for (k, v) in g.iter().enumerate() {
                        s[k % c] += v;
                    }
                });
            }
            Op::Conv1d { x, w, stride, pad } => {
                let xs = self.nodes[*x].value.shape();
                let ws = self.nodes[*w].value.shape();
                let (cin, l, cout, k) = (xs[0], xs[1], ws[0], ws[2]);
                let lout = node.value.cols();
                let cols = im2col(val(*x), cin, l, k, *stride, *pad, lout);
                self.acc(grads, *w, |s| gemm(cout, lout, cin * k, g, false, &cols, true, 1.0, s));
                if self.nodes[*x].needs_grad {
                    let mut dcols = vec![0.0; cin * k * lout];
                    gemm(cin * k, cout, lout, val(*w), true, g, false, 0.0, &mut dcols);
                    let dx = col2im(&dcols, cin, l, k, *stride, *pad, lout);
                    self.acc(grads, *x, |s| add_into(s, &dx));
                }
            }
            Op::ConvT1d { x, w, stride, pad } => {
                let xs = self.nodes[*x].value.shape();
                let ws = self.nodes[*w].value.shape();
                let (cin, l, cout, k) = (xs[0], xs[1], ws[1], ws[2]);
                let lo = node.value.cols();
                let dcols = im2col(g, cout, lo, k, *stride, *pad, l);
                self.acc(grads, *x, |s| gemm(cin, cout * k, l, val(*w), false, &dcols, false, 1.0, s));
                self.acc(grads, *w, |s| gemm(cin, l, cout * k, val(*x), false, &dcols, true, 1.0, s));
            }
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let ash = self.nodes[*a].value.shape();
                let k = if *ta { ash[0] } else { ash[1] };
                // C = A·B: dA = dC·Bᵀ, dB = Aᵀ·dC, adjusted for stored transposes.
                self.acc(grads, *a, |s| {
                    if *ta {
                        gemm(k, n, m, val(*b), *tb, g, true, 1.0, s);
                    } else {
                        gemm(m, n, k, g, false, val(*b), !*tb, 1.0, s);
                    }
                });
                self.acc(grads, *b, |s| {
                    if *tb {
                        gemm(n, m, k, g, true, val(*a), *ta, 1.0, s);
                    } else {
                        gemm(k, m, n, val(*a), !*ta, g, false, 1.0, s);
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                self.acc(grads, *a, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (r, len) = (node.value.rows(), node.value.cols());
                let c = self.nodes[*x].value.cols();
                self.acc(grads, *x, |s| {
                    for i in 0..r {
                        for j in 0..len {
                            s[i * c + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.value.rows(), node.value.cols());
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    self.acc(grads, p, |s| {
                        for i in 0..r {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    self.acc(grads, p, |s| add_into(s, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::CausalSoftmax(x) => {
                let c = node.value.cols();
                let p = node.value.data();
                self.acc(grads, *x, |s| {
                    for i in 0..c {
                        let row = i * c..i * c + i + 1;
                        let dot: f64 = p[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                        for k in row {
                            s[k] += p[k] * (g[k] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let (vx, vg) = (val(*x), val(*gamma));
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let row = &vx[i * c..(i + 1) * c];
                    let (mu, inv) = row_stats(row);
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        let gy = g[i * c + j];
                        dg[j] += gy * xhat;
                        db[j] += gy;
                        let d = gy * vg[j];
                        mean_d += d;
                        mean_dx += d * xhat;
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        dx[i * c + j] = inv * (g[i * c + j] * vg[j] - mean_d - xhat * mean_dx);
                    }
                }
                self.acc(grads, *x, |s| add_into(s, &dx));
                self.acc(grads, *gamma, |s| add_into(s, &dg));
                self.acc(grads, *beta, |s| add_into(s, &db));
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                self.acc(grads, *table, |s| {
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
                    }
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let f = 2.0 * g[0] / va.len().max(1) as f64;
                self.acc(grads, *a, |s| {
                    for k in 0..s.len() {
                        s[k] += f * (va[k] - vb[k]);
                    }
                });
                self.acc(grads, *b, |s| {
                    for k in 0..s.len() {
                        s[k] -= f * (va[k] - vb[k]);
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let v = self.nodes[*logits].value.cols();
                let count = targets.iter().filter(|t| t.is_some()).count();
                if count == 0 {
                    return;
                }
                let f = g[0] / count as f64;
                let vl = val(*logits);
                self.acc(grads, *logits, |s| {
                    for (i, tgt) in targets.iter().enumerate() {
                        let Some(tgt) = tgt else { continue };
                        let row = &vl[i * v..(i + 1) * v];
                        let lse = log_sum_exp(row);
                        for j in 0..v {
                            s[i * v + j] += f * (row[j] - lse).exp();
                        }
                        s[i * v + tgt] -= f;
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let f = g[0] / self.nodes[*a].value.len().max(1) as f64;
                self.acc(grads, *a, |s| s.iter_mut().for_each(|x| *x += f));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
    (mu, 1.0 / (var + LN_EPS).sqrt())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_difference_kernel() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = g.input(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let y = g.conv1d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[-2.0]);
    }

    #[test]
    fn identity_kernel_and_stride_shape() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 8], |i| i as f64));
        let id = g.input(t(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.conv1d(x, id, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let w = g.input(Tensor::zeros(&[3, 2, 2]));
        let y = g.conv1d(x, w, 2, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 4]);
    }

    #[test]
    fn transpose_conv_scatter_and_length() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 0.0]));
        let w = g.input(t(&[1, 1, 2], &[1.0, 1.0]));
        let y = g.conv_transpose1d(x, w, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 0.0, 0.0]);

        let x = g.input(Tensor::zeros(&[3, 16]));
        let w = g.input(Tensor::zeros(&[4, 3, 4]));
        let down = g.conv1d(x, w, 2, 1).unwrap();
        assert_eq!(g.value(down).cols(), 8);
        let up = g.conv_transpose1d(down, w, 2, 1).unwrap();
        assert_eq!(g.value(up).shape(), &[3, 16]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3]));
        let w = g.input(Tensor::zeros(&[1, 3, 2]));
        assert!(matches!(g.conv1d(x, w, 1, 0), Err(TensorError::ShapeMismatch { .. })));
        let w = g.input(Tensor::zeros(&[1, 2, 9]));
        assert!(g.conv1d(x, w, 1, 0).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let y = g.mul(w, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param(id).unwrap(), vec![6.0]);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let s = g.stop_grad(w);
        let y = g.mul(s, w).unwrap();
        assert_eq!(g.value(y).item(), 9.0);
        assert_eq!(g.backward(y).unwrap().param(id).unwrap(), vec![3.0]);
    }

    #[test]
    fn straight_through_routes_to_z() {
        let mut g = Graph::new();
        let mut store = ParameterStore::new();
        let id = store.add("z", t(&[2], &[1.0, 2.0])).unwrap();
        let z = g.param(&store, id);
        let zq = g.input(t(&[2], &[0.0, 5.0]));
        let st = g.straight_through(z, zq).unwrap();
        assert_eq!(g.value(st).data(), &[0.0, 5.0]);
        let loss = g.sum(st);
        assert_eq!(g.backward(loss).unwrap().param(id).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(&[3, 259]));
        let ce = g.cross_entropy(logits, &[Some(0), Some(5), None]).unwrap();
        assert!((g.value(ce).item() - 259f64.ln()).abs() < 1e-12);
        assert!((259f64.ln() - 5.557).abs() < 1e-3);
    }

    #[test]
    fn ignored_targets_get_zero_gradient() {
        let mut store = ParameterStore::new();
        let id = store.add("l", Tensor::from_fn(&[3, 4], |i| (i as f64).sin())).unwrap();
        let mut g = Graph::new();
        let l = g.param(&store, id);
        let ce = g.cross_entropy(l, &[Some(1), None, Some(3)]).unwrap();
        let grad = g.backward(ce).unwrap().param(id).unwrap();
        assert!(grad[4..8].iter().all(|&v| v == 0.0));
        assert!(grad[0..4].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[3, 3], |i| i as f64));
        let p = g.causal_softmax(x).unwrap();
        let v = g.value(p);
        assert_eq!(v.at(0, 0), 1.0);
        assert_eq!(v.at(0, 1), 0.0);
        assert_eq!(v.at(1, 2), 0.0);
        for r in 0..3 {
            assert!(((0..3).map(|c| v.at(r, c)).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::scalar(2.0)).unwrap();
        store.freeze(id);
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let y = g.mul(w, w).unwrap();
        assert!(g.backward(y).unwrap().param(id).is_none());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }
}
