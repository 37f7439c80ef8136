use std::borrow::Cow;

use rand::Rng;

use super::kernels::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::tensor::{check_shape, dims2};
use super::{AutodiffError, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A block of attention: query rows `q_start..q_start+q_len` attend to key
/// rows `k_start..k_start+k_len`. Packing several sequences into one matrix
/// and listing one segment per sequence keeps them from attending to each
/// other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl Segment {
    pub fn new(q_start: usize, q_len: usize, k_start: usize, k_len: usize) -> Self {
        Self {
            q_start,
            q_len,
            k_start,
            k_len,
        }
    }

    /// Self-attention block over rows `start..start+len`.
    pub fn square(start: usize, len: usize) -> Self {
        Self::new(start, len, start, len)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Gelu {
        x: Var,
        tanh: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
        causal: bool,
        probs: Vec<T>,
        offsets: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
}

struct Node<'a, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph. Build it fresh for every forward pass,
/// call [`Graph::backward`] on a scalar, then read gradients per node.
///
/// Leaves created with [`Graph::leaf`] borrow their values, so binding model
/// parameters costs nothing.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a tensor without copying its values.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.values()),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Binds an owned tensor.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_values()), Op::Leaf, rg)
    }

    pub fn input(&mut self, shape: Vec<usize>, values: Vec<T>, requires_grad: bool) -> Result<Var, AutodiffError> {
        check_shape(&shape, values.len())?;
        Ok(self.push(shape, Cow::Owned(values), Op::Leaf, requires_grad))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shapes are validated on creation")
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    fn require_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(AutodiffError::InvalidShape {
                reason: format!("{op} expects a matrix, got {other:?}"),
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.require_2d("matmul_nt", a)?;
        let (n, k2) = self.require_2d("matmul_nt", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMulNt(a, b), rg))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_2d("add_bias", x)?;
        if self.value(bias).len() != n {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, &bb)| *o += bb);
        }
        debug_assert_eq!(out.len(), m * n);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Scale(x, c), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::lit(GELU_C);
        let a = T::lit(GELU_A);
        let half = T::lit(0.5);
        let xs = self.value(x);
        let tanh: Vec<T> = xs.iter().map(|&v| tanh_via_exp(c * (v + a * v * v * v))).collect();
        let out: Vec<T> = xs.iter().zip(&tanh).map(|(&v, &t)| half * v * (T::one() + t)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Gelu { x, tanh }, rg)
    }

    /// Row-wise layer normalization with learned gain and bias (both length `n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_2d("layer_norm", x)?;
        if self.value(gamma).len() != n {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).len() != n {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let eps = T::lit(eps);
        let nf = T::from_usize(n).unwrap();
        let xs = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            vec![m, n],
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Gathers rows of `table` (`V×d`) by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let (rows, d) = self.require_2d("embedding", table)?;
        if ids.is_empty() {
            return Err(AutodiffError::InvalidShape {
                reason: "embedding lookup of zero ids".into(),
            });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: rows,
                });
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            Cow::Owned(out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Softmax(x), rg)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `Nq×d`, `k` and `v` are `Nk×d`; the `d` columns split into
    /// `heads` contiguous groups. Each segment is an independent attention
    /// block; output rows not covered by a segment are zero. With `causal`,
    /// query `i` of a segment sees keys `0..=i` and segments must be square.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[Segment],
        causal: bool,
    ) -> Result<Var, AutodiffError> {
        let (nq, d) = self.require_2d("attention", q)?;
        let (nk, dk) = self.require_2d("attention", k)?;
        if dk != d {
            return Err(self.mismatch("attention", q, k));
        }
        if self.shape(v) != self.shape(k) {
            return Err(self.mismatch("attention", k, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(AutodiffError::InvalidShape {
                reason: format!("width {d} is not divisible into {heads} heads"),
            });
        }
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for s in segments {
            if s.q_len == 0 || s.k_len == 0 || s.q_start + s.q_len > nq || s.k_start + s.k_len > nk {
                return Err(AutodiffError::InvalidShape {
                    reason: format!("segment {s:?} out of bounds for {nq} queries and {nk} keys"),
                });
            }
            if causal && s.q_len != s.k_len {
                return Err(AutodiffError::InvalidShape {
                    reason: format!("causal segment must be square, got {s:?}"),
                });
            }
            offsets.push(total);
            total += heads * s.q_len * s.k_len;
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qs, ks, vs) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); total];
        let mut out = vec![T::zero(); nq * d];
        for (s, &off) in segments.iter().zip(&offsets) {
            for h in 0..heads {
                let base = off + h * s.q_len * s.k_len;
                for i in 0..s.q_len {
                    let qrow = &qs[(s.q_start + i) * d + h * dh..][..dh];
                    let limit = if causal { i + 1 } else { s.k_len };
                    let prow = &mut probs[base + i * s.k_len..base + i * s.k_len + limit];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let krow = &ks[(s.k_start + j) * d + h * dh..][..dh];
                        *p = dot(qrow, krow) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[(s.q_start + i) * d + h * dh..][..dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vrow = &vs[(s.k_start + j) * d + h * dh..][..dh];
                        orow.iter_mut().zip(vrow).for_each(|(o, &vv)| *o += p * vv);
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            vec![nq, d],
            Cow::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                causal,
                probs,
                offsets,
            },
            rg,
        ))
    }

    /// Summed token cross-entropy of `logits` (`n×V`) against `targets`.
    /// Rows whose target equals `ignore` contribute neither loss nor gradient.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, AutodiffError> {
        let (n, vocab) = self.dims(logits);
        if targets.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy_logits",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        let xs = self.value(logits);
        let mut probs = vec![T::zero(); n * vocab];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            if t >= vocab {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "cross_entropy_logits",
                    index: t,
                    bound: vocab,
                });
            }
            let row = &xs[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[t];
            for (p, &x) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
            },
            rg,
        ))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (m, n) = self.require_2d("slice_rows", x)?;
        if len == 0 || start + len > m {
            return Err(AutodiffError::InvalidShape {
                reason: format!("row slice {start}..{} of a {m}-row matrix", start + len),
            });
        }
        let out = self.value(x)[start * n..(start + len) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![len, n], Cow::Owned(out), Op::SliceRows { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        check_shape(&shape, self.value(x).len())?;
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Reshape(x), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    /// Inverted dropout. A zero rate returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Dropout { x, mask }, rg)
    }

    /// Reverse-mode sweep from a scalar. Afterwards [`Graph::grad`] returns
    /// `∂loss/∂node` for every node, zero where no path to `loss` exists.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.nodes[v.0].value.len()],
        }
    }

    /// Adds the gradient of `v` into `tensor`'s gradient buffer.
    pub fn write_grad(&self, v: Var, tensor: &mut Tensor<T>) -> Result<(), AutodiffError> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![T::zero(); tensor.len()]),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&nodes[a.0].shape);
                let n = dims2(&nodes[b.0].shape).1;
                if let Some(ga) = buf(grads, nodes, *a) {
                    matmul_nt_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    matmul_tn_acc(&nodes[a.0].value, g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims2(&nodes[a.0].shape);
                let n = dims2(&nodes[b.0].shape).0;
                if let Some(ga) = buf(grads, nodes, *a) {
                    matmul_acc(g, &nodes[b.0].value, ga, m, n, k);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    matmul_tn_acc(g, &nodes[a.0].value, gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = buf(grads, nodes, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    for ((x, &y), &bv) in ga.iter_mut().zip(g).zip(nodes[b.0].value.iter()) {
                        *x += y * bv;
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for ((x, &y), &av) in gb.iter_mut().zip(g).zip(nodes[a.0].value.iter()) {
                        *x += y * av;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
                let n = nodes[bias.0].value.len();
                if let Some(gb) = buf(grads, nodes, *bias) {
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
                }
            }
            Op::Gelu { x, tanh } => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    let c = T::lit(GELU_C);
                    let a = T::lit(GELU_A);
                    let half = T::lit(0.5);
                    let three = T::lit(3.0);
                    for (((o, &gy), &v), &t) in gx.iter_mut().zip(g).zip(nodes[x.0].value.iter()).zip(tanh) {
                        let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                        *o += gy * (half * (T::one() + t) + half * v * dt);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = nodes[gamma.0].value.len();
                let m = inv_std.len();
                if let Some(gg) = buf(grads, nodes, *gamma) {
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if let Some(gb) = buf(grads, nodes, *beta) {
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                }
                let gamma_v = &nodes[gamma.0].value;
                if let Some(gx) = buf(grads, nodes, *x) {
                    let nf = T::from_usize(n).unwrap();
                    let mut dxhat = vec![T::zero(); n];
                    for r in 0..m {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..n {
                            let d = g[r * n + c] * gamma_v[c];
                            dxhat[c] = d;
                            s1 += d;
                            s2 += d * xhat[r * n + c];
                        }
                        let k = inv_std[r] / nf;
                        for c in 0..n {
                            gx[r * n + c] += k * (nf * dxhat[c] - s1 - xhat[r * n + c] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = dims2(&nodes[table.0].shape).1;
                if let Some(gt) = buf(grads, nodes, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = dims2(&node.shape);
                let y = &node.value;
                if let Some(gx) = buf(grads, nodes, *x) {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let s = dot(yr, gr);
                        for c in 0..n {
                            gx[r * n + c] += yr[c] * (gr[c] - s);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                causal,
                probs,
                offsets,
            } => {
                let (nq, d) = dims2(&nodes[q.0].shape);
                let nk = dims2(&nodes[k.0].shape).0;
                let dh = d / heads;
                let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                let (qs, ks, vs) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                let mut dq = vec![T::zero(); nq * d];
                let mut dk = vec![T::zero(); nk * d];
                let mut dv = vec![T::zero(); nk * d];
                let mut ds = Vec::new();
                for (s, &off) in segments.iter().zip(offsets) {
                    for h in 0..*heads {
                        let base = off + h * s.q_len * s.k_len;
                        for i in 0..s.q_len {
                            let limit = if *causal { i + 1 } else { s.k_len };
                            let prow = &probs[base + i * s.k_len..base + i * s.k_len + limit];
                            let go = &g[(s.q_start + i) * d + h * dh..][..dh];
                            ds.clear();
                            for (j, &p) in prow.iter().enumerate() {
                                let vrow = &vs[(s.k_start + j) * d + h * dh..][..dh];
                                ds.push(dot(go, vrow));
                                let dvrow = &mut dv[(s.k_start + j) * d + h * dh..][..dh];
                                dvrow.iter_mut().zip(go).for_each(|(a, &b)| *a += p * b);
                            }
                            let mix = dot(prow, &ds);
                            let qrow = &qs[(s.q_start + i) * d + h * dh..][..dh];
                            for (j, &p) in prow.iter().enumerate() {
                                let dsj = p * (ds[j] - mix) * scale;
                                if dsj == T::zero() {
                                    continue;
                                }
                                let krow = &ks[(s.k_start + j) * d + h * dh..][..dh];
                                let dqrow = &mut dq[(s.q_start + i) * d + h * dh..][..dh];
                                dqrow.iter_mut().zip(krow).for_each(|(a, &b)| *a += dsj * b);
                                let dkrow = &mut dk[(s.k_start + j) * d + h * dh..][..dh];
                                dkrow.iter_mut().zip(qrow).for_each(|(a, &b)| *a += dsj * b);
                            }
                        }
                    }
                }
                for (var, local) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(gv) = buf(grads, nodes, *var) {
                        gv.iter_mut().zip(&local).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
            } => {
                let vocab = dims2(&nodes[logits.0].shape).1;
                let scale = g[0];
                if let Some(gl) = buf(grads, nodes, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        let row = &mut gl[r * vocab..(r + 1) * vocab];
                        for (o, &p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = dims2(&node.shape).1;
                if let Some(gx) = buf(grads, nodes, *x) {
                    let dst = &mut gx[start * n..start * n + g.len()];
                    dst.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for ((a, &b), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *a += b * m;
                    }
                }
            }
        }
    }
}

fn buf<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<'_, T>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

/// `tanh(u) = 1 - 2 / (e^{2u} + 1)`; one `exp` is cheaper than libm's tanh
/// and saturates correctly at both ends.
fn tanh_via_exp<T: Scalar>(u: T) -> T {
    T::one() - (T::one() + T::one()) / ((u + u).exp() + T::one())
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x = *x / z;
    }
}
