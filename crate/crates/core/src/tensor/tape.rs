use rand::Rng;

use super::{Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    KlDiv {
        log_q: Var,
        p: Vec<T>,
        rows: usize,
    },
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<T>),
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in evaluation order, so the list is always
/// topologically sorted and `backward` is a single reverse sweep.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    training: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(op: &'static str, a: &[usize], b: &[usize]) -> Result<T, TensorError> {
    Err(TensorError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    })
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let x3 = x * x * x;
    let u = c * (x + k * x3);
    let t = u.tanh();
    let value = half * x * (one + t);
    let du = c * (one + T::lit(3.0) * k * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * du;
    (value, deriv)
}

impl<T: Scalar> Tape<T> {
    /// A tape in evaluation mode (dropout is the identity).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
        }
    }

    pub fn training() -> Self {
        Self {
            nodes: Vec::new(),
            training: true,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, invalidating their
    /// handles. Used to reuse a shared prefix (e.g. an encoder pass).
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaves with `requires_grad` accumulate gradients across
    /// calls to [`Tape::backward`] until [`Tape::zero_grad`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2().ok_or_else(|| TensorError::Invalid {
            op,
            msg: format!("expected a matrix, got shape {:?}", self.shape(v)),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", &sa, &sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return shape_err("matmul_nt", &sa, &sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let out = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(op, va.shape(), vb.shape());
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("add_row", a)?;
        if self.value(row).len() != n {
            return shape_err("add_row", self.shape(a), self.shape(row));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o = *o + b;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| x * c).collect(),
        };
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| gelu_parts(x).0).collect(),
        };
        self.push(t, Op::Gelu(a), &[a])
    }

    /// Normalizes each row to zero mean / unit variance, then applies `gain`
    /// and `bias` (both of length `cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("layer_norm", x)?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return shape_err("layer_norm", self.shape(x), self.shape(gain));
        }
        let eps = T::lit(1e-5);
        let nt = T::from_usize(n).unwrap();
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.softmax_masked(a, None)
    }

    /// Row-wise softmax where `allowed[i]` false forces output `i` to zero.
    /// A row with nothing allowed produces all zeros.
    pub fn softmax_masked(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("softmax", a)?;
        if n == 0 {
            return Err(TensorError::Invalid {
                op: "softmax",
                msg: "empty last axis".into(),
            });
        }
        if let Some(mask) = allowed {
            if mask.len() != m * n {
                return shape_err("softmax", self.shape(a), &[mask.len()]);
            }
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let ok = |j: usize| allowed.is_none_or(|mk| mk[i * n + j]);
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                continue;
            }
            let mut z = T::zero();
            for j in 0..n {
                if ok(j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    z = z + e;
                }
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o = *o / z;
            }
        }
        let shape = self.shape(a).to_vec();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax(a), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("log_softmax", a)?;
        if n == 0 {
            return Err(TensorError::Invalid {
                op: "log_softmax",
                msg: "empty last axis".into(),
            });
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let lse = log_sum_exp(row);
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(t, Op::LogSoftmax(a), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let (_, n) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != n {
                return shape_err("concat_rows", self.shape(first), self.shape(p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != m {
                return shape_err("concat_cols", self.shape(first), self.shape(p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("slice_rows", a)?;
        if start + len > m {
            return shape_err("slice_rows", self.shape(a), &[start, len]);
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], data)?;
        Ok(self.push(t, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("slice_cols", a)?;
        if start + len > n {
            return shape_err("slice_cols", self.shape(a), &[start, len]);
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data)?;
        Ok(self.push(t, Op::SliceCols(a, start), &[a]))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("gather_rows", table)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {m} rows"),
            });
        }
        let x = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&x[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(vec![idx.len(), n], data)?;
        Ok(self.push(t, Op::GatherRows(table, idx.to_vec()), &[table]))
    }

    /// Mean over non-ignored rows of `-ln softmax(logits)[row, target]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Var, TensorError> {
        let t: Vec<Option<usize>> = targets
            .iter()
            .map(|&t| if Some(t) == ignore_index { None } else { Some(t) })
            .collect();
        self.cross_entropy_opt(logits, &t)
    }

    /// Cross-entropy with `None` marking ignored rows.
    pub fn cross_entropy_opt(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("cross_entropy", logits)?;
        if targets.len() != m {
            return shape_err("cross_entropy", self.shape(logits), &[targets.len()]);
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= n) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("target {bad} out of range for {n} classes"),
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(TensorError::EmptyLoss);
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); m * n];
        let mut total = T::zero();
        for (i, tgt) in targets.iter().enumerate() {
            let Some(tgt) = *tgt else { continue };
            let row = &x[i * n..(i + 1) * n];
            let lse = log_sum_exp(row);
            total = total + (lse - row[tgt]);
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::from_usize(count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Mean over rows of `Σ_c p_c (ln p_c − log_q_c)`, with `0 · ln 0 = 0`.
    pub fn kl_divergence(&mut self, p: &Tensor<T>, log_q: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2("kl_divergence", log_q)?;
        if p.dims2() != Some((m, n)) {
            return shape_err("kl_divergence", p.shape(), self.shape(log_q));
        }
        if m == 0 {
            return Err(TensorError::EmptyLoss);
        }
        for i in 0..m {
            let row = p.row(i);
            let sum: T = row.iter().copied().sum();
            if row.iter().any(|&v| v < T::zero() || !v.is_finite())
                || (sum - T::one()).abs() > T::lit(1e-4)
            {
                return Err(TensorError::Unnormalized {
                    row: i,
                    sum: sum.to_f64_lossy(),
                });
            }
        }
        let lq = self.value(log_q).data();
        let mut total = T::zero();
        for (&pc, &lqc) in p.data().iter().zip(lq) {
            if pc > T::zero() {
                total = total + pc * (pc.ln() - lqc);
            }
        }
        let loss = total / T::from_usize(m).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::KlDiv {
                log_q,
                p: p.data().to_vec(),
                rows: m,
            },
            &[log_q],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.len().max(1)).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Inverted dropout. Identity in evaluation mode or at rate 0; the mask is
    /// a constant of the graph.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f32, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::one() / (T::one() - T::lit(rate as f64));
        let v = self.value(a);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.random::<f32>() < rate { T::zero() } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&x, &k)| x * k).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout(a, mask), &[a]))
    }

    /// `Σ wᵢ · xᵢ` over scalar inputs, accumulated left to right from zero.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var, TensorError> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(TensorError::NotScalar(self.shape(v).to_vec()));
            }
            total = total + w * self.value(v).item();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), &inputs))
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are rebuilt
    /// on every call; leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn accumulate_at(&mut self, v: Var, offset: usize, delta: &[T]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![T::zero(); len]);
        for (a, &d) in g[offset..offset + delta.len()].iter_mut().zip(delta) {
            *a = *a + d;
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).shape()[1];
                if self.requires_grad(a) {
                    // dA = G · Bᵀ
                    let da = matmul_nt(g, self.value(b).data(), m, n, k);
                    self.accumulate(a, da);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ · G
                    let db = matmul_tn(self.value(a).data(), g, m, k, n);
                    self.accumulate(b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).shape()[0];
                if self.requires_grad(a) {
                    // dA = G · B
                    let da = matmul_nn(g, self.value(b).data(), m, n, k);
                    self.accumulate(a, da);
                }
                if self.requires_grad(b) {
                    // dB = Gᵀ · A
                    let db = matmul_tn(g, self.value(a).data(), m, n, k);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::AddRow(a, row) => {
                self.accumulate(a, g.to_vec());
                if self.requires_grad(row) {
                    let n = self.value(row).len();
                    let mut dr = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        for (d, &x) in dr.iter_mut().zip(chunk) {
                            *d = *d + x;
                        }
                    }
                    self.accumulate(row, dr);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let d = g.iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(a, d);
                }
                if self.requires_grad(b) {
                    let d = g.iter().zip(self.value(a).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(b, d);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(a, g.iter().map(|&x| x * c).collect());
            }
            Op::Gelu(a) => {
                let d = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&gy, &x)| gy * gelu_parts(x).1)
                    .collect();
                self.accumulate(a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(gain).len();
                let m = rstd.len();
                let gv = self.value(gain).data().to_vec();
                if self.requires_grad(gain) || self.requires_grad(bias) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for r in 0..m {
                        for j in 0..n {
                            let gy = g[r * n + j];
                            dg[j] = dg[j] + gy * xhat[r * n + j];
                            db[j] = db[j] + gy;
                        }
                    }
                    self.accumulate(gain, dg);
                    self.accumulate(bias, db);
                }
                if self.requires_grad(x) {
                    let nt = T::from_usize(n).unwrap();
                    let mut dx = vec![T::zero(); m * n];
                    for r in 0..m {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..n {
                            let dh = g[r * n + j] * gv[j];
                            mean_d = mean_d + dh;
                            mean_dx = mean_dx + dh * xhat[r * n + j];
                        }
                        mean_d = mean_d / nt;
                        mean_dx = mean_dx / nt;
                        for j in 0..n {
                            let dh = g[r * n + j] * gv[j];
                            dx[r * n + j] = rstd[r] * (dh - mean_d - xhat[r * n + j] * mean_dx);
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].value.data().to_vec();
                let (_, n) = self.value(a).dims2().unwrap();
                let mut dx = vec![T::zero(); y.len()];
                for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, dx);
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[i].value.data().to_vec();
                let (_, n) = self.value(a).dims2().unwrap();
                let mut dx = vec![T::zero(); y.len()];
                for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let gs: T = gr.iter().copied().sum();
                    for j in 0..n {
                        dx[r * n + j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.accumulate(a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(p).len();
                    self.accumulate(p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().unwrap().1).collect();
                let total: usize = widths.iter().sum();
                let m = g.len() / total.max(1);
                let mut start = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g[r * total + start..r * total + start + w]);
                        }
                        self.accumulate(p, d);
                    }
                    start += w;
                }
            }
            Op::SliceRows(a, start) => {
                let (_, n) = self.value(a).dims2().unwrap();
                self.accumulate_at(a, start * n, g);
            }
            Op::SliceCols(a, start) => {
                if self.requires_grad(a) {
                    let (m, n) = self.value(a).dims2().unwrap();
                    let w = g.len() / m.max(1);
                    let mut d = vec![T::zero(); m * n];
                    for r in 0..m {
                        d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    self.accumulate(a, d);
                }
            }
            Op::GatherRows(table, idx) => {
                if self.requires_grad(table) {
                    let (_, n) = self.value(table).dims2().unwrap();
                    for (r, &row) in idx.iter().enumerate() {
                        self.accumulate_at(table, row * n, &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let n = self.value(logits).dims2().unwrap().1;
                let scale = g[0] / T::from_usize(count).unwrap();
                let mut d = vec![T::zero(); probs.len()];
                for (r, tgt) in targets.iter().enumerate() {
                    let Some(t) = *tgt else { continue };
                    for j in 0..n {
                        d[r * n + j] = probs[r * n + j] * scale;
                    }
                    d[r * n + t] = d[r * n + t] - scale;
                }
                self.accumulate(logits, d);
            }
            Op::KlDiv { log_q, p, rows } => {
                let scale = g[0] / T::from_usize(rows).unwrap();
                self.accumulate(log_q, p.iter().map(|&pc| -pc * scale).collect());
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                let v = g[0] / T::from_usize(n.max(1)).unwrap();
                self.accumulate(a, vec![v; n]);
            }
            Op::Dropout(a, mask) => {
                self.accumulate(a, g.iter().zip(&mask).map(|(&x, &k)| x * k).collect());
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    self.accumulate(v, vec![g[0] * w]);
                }
            }
        }
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    let s: T = row.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln()
}

/// `A (m×k) · B (k×n)`
fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (x, &bv) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *x = *x + av * bv;
            }
        }
    }
    out
}

/// `A (m×k) · Bᵀ` with `B: n×k`.
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                s = s + x * y;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `Aᵀ · B` with `A: m×k`, `B: m×n`, giving `k×n`.
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for r in 0..m {
        let br = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            if av == T::zero() {
                continue;
            }
            for (x, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *x = *x + av * bv;
            }
        }
    }
    out
}
