//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run its vector-Jacobian product. Nodes are visited in reverse
//! insertion order during [`Graph::backward`], so accumulation order is fixed
//! and results are bit-reproducible.

use std::sync::Arc;

use crate::attention::{self, AttentionLayout, AttnGrads};
use crate::error::{Result, TensorError};
use crate::float::{gemm, lit, Float, MatRef};
use crate::sparse::{Neighborhoods, SparseMatrix};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    Scale { x: Var, factor: F },
    Relu(Var),
    LeakyRelu { x: Var, slope: F },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
    Concat { parts: Vec<Var>, axis: usize },
    MaskedFill { x: Var, mask: Vec<bool> },
    Sum(Var),
    SelectRows { x: Var, rows: Vec<usize> },
    Gather { src: Var, index: Arc<Vec<usize>> },
    SpMM { mat: Arc<SparseMatrix<F>>, x: Var },
    Attention { q: Var, k: Var, v: Var, bias: Option<Var>, layout: Arc<AttentionLayout>, probs: Vec<F> },
    Gat { z: Var, att: Var, hood: Arc<Neighborhoods>, alpha: Vec<F>, pre: Vec<F>, slope: F },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded computation. Cheap to create; build one per forward pass.
pub struct Graph<F: Float> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

fn leaky_grad<F: Float>(x: F, slope: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        slope
    }
}

fn leaky<F: Float>(x: F, slope: F) -> F {
    if x > F::zero() {
        x
    } else {
        slope * x
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: never receives a gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let shape = self.shape(v);
        if shape.len() != 2 {
            return Err(TensorError::Rank { op, expected: 2, shape: shape.to_vec() });
        }
        Ok((shape[0], shape[1]))
    }

    /// Attention probabilities saved by an [`Graph::attention`] node, laid out
    /// per segment as `[head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<(&AttentionLayout, &[F])> {
        match &self.nodes[v.0].op {
            Op::Attention { layout, probs, .. } => Some((layout.as_ref(), probs.as_slice())),
            _ => None,
        }
    }

    // ----- forward operations -------------------------------------------

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (br, bc) = self.matrix("matmul", b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        let bview = if trans_b { MatRef::dense(0, br, bc).transposed() } else { MatRef::dense(0, br, bc) };
        gemm(
            F::one(),
            self.value(a).data(),
            MatRef::dense(0, m, k),
            self.value(b).data(),
            bview,
            F::zero(),
            &mut out,
            MatRef::dense(0, m, n),
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Broadcast-add a `[n]` row to every row of `x: [m, n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.matrix("add_row", x)?;
        if self.value(row).len() != n {
            return Err(mismatch("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow { x, row }, &[x, row]))
    }

    /// `x · W + b` with `W: [in, out]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(F::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let value = self.value(x).map(|v| leaky(v, slope));
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let cols = src.cols();
        if src.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite("softmax input".into()));
        }
        let mut value = src.clone();
        for row in value.data_mut().chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` of width `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims();
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let nf = lit::<F>(n as f64);
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![F::zero(); m * n];
        let mut inv_std = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let is = F::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]))
    }

    /// Rows of `table: [vocab, d]` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix("embedding", table)?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index { op: "embedding", index: id, len: vocab });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Mean token-level cross-entropy of `logits: [t, vocab]` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, vocab) = self.matrix("cross_entropy", logits)?;
        if targets.len() != t {
            return Err(mismatch("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if t == 0 {
            return Err(TensorError::Invalid("cross_entropy over zero rows".into()));
        }
        let src = self.value(logits).data();
        let mut probs = vec![F::zero(); t * vocab];
        let mut loss = F::zero();
        for (i, &target) in targets.iter().enumerate() {
            if target >= vocab {
                return Err(TensorError::Index { op: "cross_entropy", index: target, len: vocab });
            }
            let row = &src[i * vocab..(i + 1) * vocab];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            let prow = &mut probs[i * vocab..(i + 1) * vocab];
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - max).exp();
                total += *p;
            }
            for p in prow.iter_mut() {
                *p /= total;
            }
            loss += (total.ln() + max) - row[target];
        }
        let value = Tensor::scalar(loss / lit(t as f64));
        if !value.all_finite() {
            return Err(TensorError::NonFinite("cross_entropy".into()));
        }
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits]))
    }

    /// Concatenate 2-D tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::Invalid("concat needs parts and axis 0 or 1".into()));
        }
        let dims: Vec<(usize, usize)> =
            parts.iter().map(|&p| self.matrix("concat", p)).collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        for (&p, &(r, c)) in parts.iter().zip(&dims) {
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(mismatch("concat", self.shape(parts[0]), self.shape(p)));
            }
        }
        let value = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * c0);
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            Tensor::new(&[rows, c0], out)?
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::new(&[r0, cols], out)?
        };
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// Replace entries where `mask` is set with `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: F) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(mismatch("masked_fill", self.shape(x), &[mask.len()]));
        }
        let mut value = self.value(x).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(mask) {
            if m {
                *v = fill;
            }
        }
        Ok(self.push(value, Op::MaskedFill { x, mask: mask.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, F::one() / lit(n as f64))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(TensorError::Index { op: "select_rows", index: r, len: m });
            }
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(&[rows.len(), n], out)?;
        Ok(self.push(value, Op::SelectRows { x, rows: rows.to_vec() }, &[x]))
    }

    /// Flat gather `out[i] = src[index[i]]`, returned with shape `[index.len()]`.
    pub fn gather(&mut self, src: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i >= data.len() {
                return Err(TensorError::Index { op: "gather", index: i, len: data.len() });
            }
            out.push(data[i]);
        }
        let value = Tensor::new(&[index.len()], out)?;
        Ok(self.push(value, Op::Gather { src, index }, &[src]))
    }

    /// Sparse-dense product `mat · x` with a constant sparse operator.
    pub fn spmm(&mut self, mat: Arc<SparseMatrix<F>>, x: Var) -> Result<Var> {
        let (m, d) = self.matrix("spmm", x)?;
        if mat.cols() != m {
            return Err(mismatch("spmm", &[mat.rows(), mat.cols()], self.shape(x)));
        }
        let mut out = vec![F::zero(); mat.rows() * d];
        mat.spmm_acc(self.value(x).data(), d, &mut out);
        let value = Tensor::new(&[mat.rows(), d], out)?;
        Ok(self.push(value, Op::SpMM { mat, x }, &[x]))
    }

    /// Multi-head attention over packed segments.
    ///
    /// `q: [q_rows, width]`, `k`, `v: [k_rows, width]` with `width` split into
    /// `layout.heads` heads. `bias`, when given, is a flat additive term of
    /// length `layout.block_len()`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        layout: Arc<AttentionLayout>,
    ) -> Result<Var> {
        let (qr, width) = self.matrix("attention", q)?;
        let (kr, kw) = self.matrix("attention", k)?;
        if kw != width || self.shape(v) != self.shape(k) {
            return Err(mismatch("attention", self.shape(q), self.shape(k)));
        }
        if q == k || q == v || k == v || bias.is_some_and(|b| b == q || b == k || b == v) {
            return Err(TensorError::Invalid("attention inputs must be distinct nodes".into()));
        }
        if layout.heads == 0 || width % layout.heads != 0 {
            return Err(TensorError::Invalid(format!("width {width} not divisible by {} heads", layout.heads)));
        }
        if layout.q_rows() > qr || layout.k_rows() > kr {
            return Err(mismatch("attention layout", &[layout.q_rows(), layout.k_rows()], &[qr, kr]));
        }
        let blocks = layout.block_len();
        if let Some(b) = bias {
            if self.value(b).len() != blocks {
                return Err(mismatch("attention bias", &[blocks], self.shape(b)));
            }
        }
        let mut out = vec![F::zero(); qr * width];
        let mut probs = vec![F::zero(); blocks];
        attention::forward(
            &layout,
            width,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
            &mut probs,
        );
        let value = Tensor::new(&[qr, width], out)?;
        let mut inputs = vec![q, k, v];
        inputs.extend(bias);
        Ok(self.push(value, Op::Attention { q, k, v, bias, layout, probs }, &inputs))
    }

    /// Single-head graph attention aggregation.
    ///
    /// `z: [n, d]` holds projected node features and `att: [2d]` the scoring
    /// vector. For every node `u`, scores `LeakyReLU(att · [z_u ; z_v])` over
    /// `v ∈ hood(u)` are softmax-normalised and used to average `z_v`.
    pub fn gat_aggregate(&mut self, z: Var, att: Var, hood: Arc<Neighborhoods>, slope: F) -> Result<Var> {
        let (n, d) = self.matrix("gat", z)?;
        if self.value(att).len() != 2 * d {
            return Err(mismatch("gat attention vector", &[2 * d], self.shape(att)));
        }
        if hood.len() != n {
            return Err(mismatch("gat neighbourhood", &[hood.len()], self.shape(z)));
        }
        if let Some(u) = (0..n).find(|&u| hood.neighbors(u).is_empty()) {
            return Err(TensorError::Invalid(format!("node {u} has an empty neighbourhood")));
        }
        let zd = self.value(z).data();
        let a = self.value(att).data();
        let s_src: Vec<F> = (0..n).map(|u| dot(&zd[u * d..(u + 1) * d], &a[..d])).collect();
        let s_dst: Vec<F> = (0..n).map(|u| dot(&zd[u * d..(u + 1) * d], &a[d..])).collect();
        let mut pre = vec![F::zero(); hood.edge_count()];
        let mut alpha = vec![F::zero(); hood.edge_count()];
        let mut out = vec![F::zero(); n * d];
        for u in 0..n {
            let span = hood.span(u);
            let nbrs = hood.neighbors(u);
            let mut max = F::neg_infinity();
            for (e, &v) in span.clone().zip(nbrs) {
                pre[e] = s_src[u] + s_dst[v];
                max = max.max(leaky(pre[e], slope));
            }
            let mut total = F::zero();
            for e in span.clone() {
                alpha[e] = (leaky(pre[e], slope) - max).exp();
                total += alpha[e];
            }
            for (e, &v) in span.zip(nbrs) {
                alpha[e] /= total;
                let w = alpha[e];
                for j in 0..d {
                    out[u * d + j] += w * zd[v * d + j];
                }
            }
        }
        let value = Tensor::new(&[n, d], out)?;
        Ok(self.push(value, Op::Gat { z, att, hood, alpha, pre, slope }, &[z, att]))
    }

    // ----- backward -----------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        let tensors = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|data| Tensor::new(node.value.shape(), data).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads: tensors })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn backprop(&self, idx: usize, gout: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).matrix_dims();
                let (br, bc) = self.value(*b).matrix_dims();
                let n = if *trans_b { br } else { bc };
                let gview = MatRef::dense(0, m, n);
                let bview = MatRef::dense(0, br, bc);
                let bmat = if *trans_b { bview.transposed() } else { bview };
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    gemm(F::one(), gout, gview, self.value(*b).data(), bmat.transposed(), F::one(), ga, MatRef::dense(0, m, k));
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let av = MatRef::dense(0, m, k);
                    if *trans_b {
                        // dB[n,k] = dCᵀ · A
                        gemm(F::one(), gout, gview.transposed(), self.value(*a).data(), av, F::one(), gb, bview);
                    } else {
                        // dB[k,n] = Aᵀ · dC
                        gemm(F::one(), self.value(*a).data(), av.transposed(), gout, gview, F::one(), gb, bview);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.slot(grads, v) {
                        acc(g, gout);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.slot(grads, *a) {
                    acc(g, gout);
                }
                if let Some(g) = self.slot(grads, *b) {
                    for (o, &d) in g.iter_mut().zip(gout) {
                        *o -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(g) = self.slot(grads, *a) {
                    for ((o, &d), &y) in g.iter_mut().zip(gout).zip(self.value(*b).data()) {
                        *o += d * y;
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for ((o, &d), &x) in g.iter_mut().zip(gout).zip(self.value(*a).data()) {
                        *o += d * x;
                    }
                }
            }
            Op::AddRow { x, row } => {
                if let Some(g) = self.slot(grads, *x) {
                    acc(g, gout);
                }
                if let Some(g) = self.slot(grads, *row) {
                    let n = g.len();
                    for chunk in gout.chunks(n) {
                        acc(g, chunk);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(g) = self.slot(grads, *x) {
                    for (o, &d) in g.iter_mut().zip(gout) {
                        *o += d * *factor;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((o, &d), &y) in g.iter_mut().zip(gout).zip(node.value.data()) {
                        if y > F::zero() {
                            *o += d;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((o, &d), &xv) in g.iter_mut().zip(gout).zip(self.value(*x).data()) {
                        *o += d * leaky_grad(xv, *slope);
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    let cols = node.value.cols().max(1);
                    for ((grow, drow), yrow) in
                        g.chunks_mut(cols).zip(gout.chunks(cols)).zip(node.value.data().chunks(cols))
                    {
                        let dot: F = drow.iter().zip(yrow).map(|(&d, &y)| d * y).sum();
                        for ((o, &d), &y) in grow.iter_mut().zip(drow).zip(yrow) {
                            *o += y * (d - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (m, n) = node.value.matrix_dims();
                if let Some(g) = self.slot(grads, *beta) {
                    for chunk in gout.chunks(n) {
                        acc(g, chunk);
                    }
                }
                if let Some(g) = self.slot(grads, *gamma) {
                    for (drow, hrow) in gout.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, &d), &h) in g.iter_mut().zip(drow).zip(hrow) {
                            *o += d * h;
                        }
                    }
                }
                if let Some(g) = self.slot(grads, *x) {
                    let gam = self.value(*gamma).data();
                    let nf = lit::<F>(n as f64);
                    let mut dxhat = vec![F::zero(); n];
                    for i in 0..m {
                        let drow = &gout[i * n..(i + 1) * n];
                        let hrow = &xhat[i * n..(i + 1) * n];
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..n {
                            dxhat[j] = drow[j] * gam[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * hrow[j];
                        }
                        let scale = inv_std[i] / nf;
                        for j in 0..n {
                            g[i * n + j] += scale * (nf * dxhat[j] - s1 - hrow[j] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(g) = self.slot(grads, *table) {
                    let d = self.value(*table).cols();
                    for (r, &id) in ids.iter().enumerate() {
                        acc(&mut g[id * d..(id + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if let Some(g) = self.slot(grads, *logits) {
                    let vocab = self.value(*logits).cols();
                    let scale = gout[0] / lit(targets.len() as f64);
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &mut g[i * vocab..(i + 1) * vocab];
                        for (o, &p) in row.iter_mut().zip(&probs[i * vocab..(i + 1) * vocab]) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if let Some(g) = self.slot(grads, p) {
                            acc(g, &gout[offset..offset + len]);
                        }
                        offset += len;
                    }
                } else {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut col = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if let Some(g) = self.slot(grads, p) {
                            for i in 0..rows {
                                acc(&mut g[i * c..(i + 1) * c], &gout[i * total + col..i * total + col + c]);
                            }
                        }
                        col += c;
                    }
                }
            }
            Op::MaskedFill { x, mask } => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((o, &d), &m) in g.iter_mut().zip(gout).zip(mask) {
                        if !m {
                            *o += d;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for o in g.iter_mut() {
                        *o += gout[0];
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                if let Some(g) = self.slot(grads, *x) {
                    let n = node.value.cols();
                    for (i, &r) in rows.iter().enumerate() {
                        acc(&mut g[r * n..(r + 1) * n], &gout[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Gather { src, index } => {
                if let Some(g) = self.slot(grads, *src) {
                    for (&i, &d) in index.iter().zip(gout) {
                        g[i] += d;
                    }
                }
            }
            Op::SpMM { mat, x } => {
                if let Some(g) = self.slot(grads, *x) {
                    mat.spmm_t_acc(gout, node.value.cols(), g);
                }
            }
            Op::Attention { q, k, v, bias, layout, probs } => {
                let width = node.value.cols();
                // q, k, v and bias are distinct nodes (checked in forward).
                let mut take = |var: Var| -> Option<Vec<F>> { self.slot(grads, var).map(std::mem::take) };
                let mut gq = take(*q);
                let mut gk = take(*k);
                let mut gv = take(*v);
                let mut gb = bias.and_then(&mut take);
                attention::backward(
                    layout,
                    width,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    gout,
                    AttnGrads {
                        dq: gq.as_deref_mut(),
                        dk: gk.as_deref_mut(),
                        dv: gv.as_deref_mut(),
                        dbias: gb.as_deref_mut(),
                    },
                );
                for (var, g) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if let Some(g) = g {
                        grads[var.0] = Some(g);
                    }
                }
                if let (Some(b), Some(g)) = (bias, gb) {
                    grads[b.0] = Some(g);
                }
            }
            Op::Gat { z, att, hood, alpha, pre, slope } => {
                let (n, d) = self.value(*z).matrix_dims();
                let zd = self.value(*z).data();
                let a = self.value(*att).data();
                let mut dz = vec![F::zero(); n * d];
                let mut ds_src = vec![F::zero(); n];
                let mut ds_dst = vec![F::zero(); n];
                let mut dalpha = Vec::new();
                for u in 0..n {
                    let span = hood.span(u);
                    let nbrs = hood.neighbors(u);
                    let gu = &gout[u * d..(u + 1) * d];
                    dalpha.clear();
                    for (e, &v) in span.clone().zip(nbrs) {
                        let zv = &zd[v * d..(v + 1) * d];
                        dalpha.push(dot(gu, zv));
                        for j in 0..d {
                            dz[v * d + j] += alpha[e] * gu[j];
                        }
                    }
                    let mix: F = span.clone().zip(&dalpha).map(|(e, &da)| alpha[e] * da).sum();
                    for ((e, &v), &da) in span.zip(nbrs).zip(&dalpha) {
                        let de = alpha[e] * (da - mix);
                        let dpre = de * leaky_grad(pre[e], *slope);
                        ds_src[u] += dpre;
                        ds_dst[v] += dpre;
                    }
                }
                if let Some(g) = self.slot(grads, *att) {
                    for u in 0..n {
                        for j in 0..d {
                            g[j] += ds_src[u] * zd[u * d + j];
                            g[d + j] += ds_dst[u] * zd[u * d + j];
                        }
                    }
                }
                if let Some(g) = self.slot(grads, *z) {
                    for u in 0..n {
                        for j in 0..d {
                            g[u * d + j] += dz[u * d + j] + ds_src[u] * a[j] + ds_dst[u] * a[d + j];
                        }
                    }
                }
            }
        }
    }
}

fn acc<F: Float>(dst: &mut [F], src: &[F]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Result of [`Graph::backward`]: one optional gradient per node.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
