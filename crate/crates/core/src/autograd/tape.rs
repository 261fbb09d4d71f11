//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] owns every intermediate value produced during one forward
//! pass. Operations return [`Var`] handles into the tape. When any operand
//! requires a gradient the operation is recorded, and [`Tape::backward`]
//! later walks the records in reverse order. Tapes built with
//! [`Tape::no_grad`] keep values only.
//!
//! Besides the generic primitives (matmul, elementwise arithmetic, concat,
//! reductions, activations) the tape has a few fused graph primitives used
//! by the score network: multi-channel message aggregation, pairwise node
//! sums and channel symmetrization. Each of them is exactly permutation
//! equivariant up to floating point reassociation.

use std::sync::Arc;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<R> {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    Concat { parts: Vec<Var>, axis: usize },
    Sum(Var),
    Transpose(Var),
    Elu(Var),
    Sigmoid(Var),
    SqFrobenius(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleShiftRows { x: Var, scale: Var, shift: Var },
    SelectRow(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    ChannelMessage { adj: Var, z: Var, eps: Var },
    PairSum(Var, Var),
    SymPairs(Var),
    BceWithLogits { logits: Var, labels: Vec<R>, mask: Vec<R>, count: R },
}

#[derive(Clone, Debug)]
struct Node<R> {
    value: Arc<Tensor<R>>,
    op: Op<R>,
    requires_grad: bool,
    /// Accumulated gradient of a leaf that requires one.
    grad: Option<Tensor<R>>,
}

/// Record of one forward computation.
#[derive(Clone, Debug)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
    recording: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records operations; only values are kept.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, once [`Tape::backward`] has run.
    pub fn grad(&self, v: Var) -> Option<&Tensor<R>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.recording;
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Leaf { param: None },
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    /// Places a parameter on the tape as a gradient-tracking leaf, sharing its storage.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Leaf { param: Some(id) },
            requires_grad: self.recording,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, operands: &[Var]) -> Var {
        let requires_grad = self.recording && operands.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad {
            op
        } else {
            Op::Leaf { param: None }
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); m * n];
        matmul_kernel(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
    ) -> Result<Tensor<R>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.len() == 1 {
            let y = tb.data()[0];
            Ok(ta.map(|x| f(x, y)))
        } else if ta.len() == 1 {
            let x = ta.data()[0];
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(Error::shape(name, ta.shape(), tb.shape()))
        }
    }

    /// Elementwise sum; a one-element operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product; a one-element operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// Concatenation along `axis`; every other extent must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", t.shape(), &[]));
        }
        let value = t.transposed();
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu);
        self.push(value, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn sq_frobenius(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SqFrobenius(a), &[a])
    }

    fn row_operands(&self, name: &'static str, x: Var, v: Var) -> Result<(usize, usize)> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if sx.len() != 2 || sv.len() != 1 || sx[1] != sv[0] {
            return Err(Error::shape(name, sx, sv));
        }
        Ok((sx[0], sx[1]))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, c) = self.row_operands("add_row", x, v)?;
        let row = self.value(v).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (y, &b) in chunk.iter_mut().zip(&row) {
                *y += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, v), &[x, v]))
    }

    /// Multiplies every row of an `r×c` matrix elementwise by a length-`c` vector.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, c) = self.row_operands("mul_row", x, v)?;
        let row = self.value(v).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (y, &g) in chunk.iter_mut().zip(&row) {
                *y *= g;
            }
        }
        Ok(self.push(value, Op::MulRow(x, v), &[x, v]))
    }

    /// `x[r, c]·scale[c] + shift[c]` for every row `r`.
    pub fn scale_shift_rows(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (_, c) = self.row_operands("scale_shift_rows", x, scale)?;
        self.row_operands("scale_shift_rows", x, shift)?;
        let (sv, bv) = (self.value(scale).data(), self.value(shift).data());
        let mut out = Vec::with_capacity(self.value(x).len());
        for chunk in self.value(x).data().chunks(c) {
            out.extend(chunk.iter().zip(sv).zip(bv).map(|((&y, &g), &b)| y * g + b));
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::ScaleShiftRows { x, scale, shift }, &[x, scale, shift]))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn select_row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || index >= t.shape()[0] {
            return Err(Error::shape("select_row", t.shape(), &[index]));
        }
        let c = t.shape()[1];
        let value = Tensor::new(vec![c], t.data()[index * c..(index + 1) * c].to_vec())?;
        Ok(self.push(value, Op::SelectRow(a, index), &[a]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start > end || end > t.shape()[0] {
            return Err(Error::shape("slice_rows", t.shape(), &[start, end]));
        }
        let c = t.shape()[1];
        let value = Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Multi-channel GIN aggregation.
    ///
    /// `adj` is a channels-last adjacency of shape `[n*n, C]`, `z` holds node
    /// features `[n, F]` and `eps` is a one-element tensor. The result has
    /// shape `[n, C*F]` with
    /// `out[i, c*F + f] = Σ_j adj[i*n + j, c]·z[j, f] + (1 + eps)·z[i, f]`.
    pub fn channel_message(&mut self, adj: Var, z: Var, eps: Var) -> Result<Var> {
        let (sa, sz) = (self.shape(adj), self.shape(z));
        if sa.len() != 2 || sz.len() != 2 || sa[0] != sz[0] * sz[0] {
            return Err(Error::shape("channel_message", sa, sz));
        }
        if self.value(eps).len() != 1 {
            return Err(Error::shape("channel_message", sz, self.shape(eps)));
        }
        let (n, f, c) = (sz[0], sz[1], sa[1]);
        let self_gain = R::one() + self.value(eps).data()[0];
        let a = self.value(adj).data();
        let zd = self.value(z).data();
        let width = c * f;
        let mut out = vec![R::zero(); n * width];
        for i in 0..n {
            let row = &mut out[i * width..(i + 1) * width];
            for j in 0..n {
                let zj = &zd[j * f..(j + 1) * f];
                let aij = &a[(i * n + j) * c..(i * n + j + 1) * c];
                for (ch, &w) in aij.iter().enumerate() {
                    if w == R::zero() {
                        continue;
                    }
                    for (o, &zv) in row[ch * f..(ch + 1) * f].iter_mut().zip(zj) {
                        *o += w * zv;
                    }
                }
            }
            let zi = &zd[i * f..(i + 1) * f];
            for ch in 0..c {
                for (o, &zv) in row[ch * f..(ch + 1) * f].iter_mut().zip(zi) {
                    *o += self_gain * zv;
                }
            }
        }
        let value = Tensor::new(vec![n, width], out)?;
        Ok(self.push(value, Op::ChannelMessage { adj, z, eps }, &[adj, z, eps]))
    }

    /// `out[i*n + j, h] = p[i, h] + q[j, h]` for node matrices `p`, `q` of shape `[n, H]`.
    pub fn pair_sum(&mut self, p: Var, q: Var) -> Result<Var> {
        let (sp, sq) = (self.shape(p), self.shape(q));
        if sp.len() != 2 || sp != sq {
            return Err(Error::shape("pair_sum", sp, sq));
        }
        let (n, h) = (sp[0], sp[1]);
        let (pd, qd) = (self.value(p).data(), self.value(q).data());
        let mut out = Vec::with_capacity(n * n * h);
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            for j in 0..n {
                let qj = &qd[j * h..(j + 1) * h];
                out.extend(pi.iter().zip(qj).map(|(&x, &y)| x + y));
            }
        }
        let value = Tensor::new(vec![n * n, h], out)?;
        Ok(self.push(value, Op::PairSum(p, q), &[p, q]))
    }

    /// Per-channel `X + Xᵀ` with the diagonal set to zero, on a channels-last
    /// pair tensor `[n*n, C]`. The result is exactly symmetric.
    pub fn sym_pairs(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = pair_side(s).ok_or_else(|| Error::shape("sym_pairs", s, &[]))?;
        let c = s[1];
        let xd = self.value(x).data();
        let mut out = vec![R::zero(); n * n * c];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (ij, ji) = ((i * n + j) * c, (j * n + i) * c);
                for ch in 0..c {
                    out[ij + ch] = xd[ij + ch] + xd[ji + ch];
                }
            }
        }
        let value = Tensor::new(s.to_vec(), out)?;
        Ok(self.push(value, Op::SymPairs(x), &[x]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`, over
    /// entries where `mask` is nonzero.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Tensor<R>, mask: &Tensor<R>) -> Result<Var> {
        let s = self.shape(logits);
        if labels.shape() != s || mask.shape() != s {
            return Err(Error::shape("bce_with_logits", s, labels.shape()));
        }
        let count = mask.data().iter().filter(|&&m| m != R::zero()).count();
        if count == 0 {
            return Err(Error::invalid("bce_with_logits: empty mask"));
        }
        let count = R::of(count as f64);
        let x = self.value(logits).data();
        let mut total = R::zero();
        for ((&xi, &yi), &mi) in x.iter().zip(labels.data()).zip(mask.data()) {
            if mi != R::zero() {
                // softplus(x) - y·x, stable for large |x|
                let sp = xi.max(R::zero()) + (-xi.abs()).exp().ln_1p();
                total += sp - yi * xi;
            }
        }
        let value = Tensor::scalar(total / count);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                labels: labels.data().to_vec(),
                mask: mask.data().to_vec(),
                count,
            },
            &[logits],
        ))
    }

    /// Propagates `d loss / d leaf` into every gradient-tracking leaf.
    ///
    /// Gradients accumulate across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_seeded(loss, R::one())
    }

    /// Like [`Tape::backward`] with the output gradient set to `seed`.
    pub fn backward_seeded(&mut self, loss: Var, seed: R) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<R>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                let node = &mut self.nodes[idx];
                let acc = node.grad.get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                for (a, &x) in acc.data_mut().iter_mut().zip(&g) {
                    *a += x;
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<R>>], v: Var) -> Option<&'a mut Vec<R>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![R::zero(); len]))
    }

    fn propagate(&self, idx: usize, g: &[R], grads: &mut [Option<Vec<R>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = G·Bᵀ
                    let bt = self.value(*b).transposed();
                    matmul_kernel(g, bt.data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = Aᵀ·G
                    matmul_at_kernel(av, g, gb, m, k, n);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -R::one()
                } else {
                    R::one()
                };
                self.reduce_broadcast(grads, *a, g, R::one());
                self.reduce_broadcast(grads, *b, g, sign);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let out_len = g.len();
                let at = |t: &Tensor<R>, k: usize| if t.len() == out_len { t.data()[k] } else { t.data()[0] };
                if self.nodes[a.0].requires_grad {
                    let contrib: Vec<R> = (0..out_len).map(|k| g[k] * at(tb, k)).collect();
                    self.reduce_broadcast(grads, *a, &contrib, R::one());
                }
                if self.nodes[b.0].requires_grad {
                    let contrib: Vec<R> = (0..out_len).map(|k| g[k] * at(ta, k)).collect();
                    self.reduce_broadcast(grads, *b, &contrib, R::one());
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(*c, g, ga);
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = self.shape(*p)[*axis] * inner;
                    if let Some(gp) = self.slot(grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (d, &s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Elu(a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        let d = if x[k] > R::zero() { R::one() } else { y[k] + R::one() };
                        ga[k] += g[k] * d;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (R::one() - y[k]);
                    }
                }
            }
            Op::SqFrobenius(a) => {
                let x = self.value(*a).data();
                let two = R::of(2.0);
                if let Some(ga) = self.slot(grads, *a) {
                    for (d, &xi) in ga.iter_mut().zip(x) {
                        *d += two * xi * g[0];
                    }
                }
            }
            Op::AddRow(x, v) => {
                let c = self.shape(*v)[0];
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(R::one(), g, gx);
                }
                if let Some(gv) = self.slot(grads, *v) {
                    for chunk in g.chunks(c) {
                        for (d, &s) in gv.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                }
            }
            Op::MulRow(x, v) => {
                let c = self.shape(*v)[0];
                let (xv, vv) = (self.value(*x).data(), self.value(*v).data());
                if let Some(gx) = self.slot(grads, *x) {
                    for (gchunk, dchunk) in g.chunks(c).zip(gx.chunks_mut(c)) {
                        for k in 0..c {
                            dchunk[k] += gchunk[k] * vv[k];
                        }
                    }
                }
                if let Some(gv) = self.slot(grads, *v) {
                    for (gchunk, xchunk) in g.chunks(c).zip(xv.chunks(c)) {
                        for k in 0..c {
                            gv[k] += gchunk[k] * xchunk[k];
                        }
                    }
                }
            }
            Op::ScaleShiftRows { x, scale, shift } => {
                let c = self.shape(*scale)[0];
                let (xv, sv) = (self.value(*x).data(), self.value(*scale).data());
                if let Some(gx) = self.slot(grads, *x) {
                    for (gchunk, dchunk) in g.chunks(c).zip(gx.chunks_mut(c)) {
                        for k in 0..c {
                            dchunk[k] += gchunk[k] * sv[k];
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *scale) {
                    for (gchunk, xchunk) in g.chunks(c).zip(xv.chunks(c)) {
                        for k in 0..c {
                            gs[k] += gchunk[k] * xchunk[k];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *shift) {
                    for gchunk in g.chunks(c) {
                        for k in 0..c {
                            gb[k] += gchunk[k];
                        }
                    }
                }
            }
            Op::SelectRow(a, index) => {
                let c = g.len();
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(R::one(), g, &mut ga[index * c..(index + 1) * c]);
                }
            }
            Op::SliceRows(a, start) => {
                let c = self.shape(*a)[1];
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(R::one(), g, &mut ga[start * c..start * c + g.len()]);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(R::one(), g, ga);
                }
            }
            Op::ChannelMessage { adj, z, eps } => self.channel_message_backward(g, *adj, *z, *eps, grads),
            Op::PairSum(p, q) => {
                let (n, h) = (self.shape(*p)[0], self.shape(*p)[1]);
                if let Some(gp) = self.slot(grads, *p) {
                    for i in 0..n {
                        let dst = &mut gp[i * h..(i + 1) * h];
                        for j in 0..n {
                            axpy(R::one(), &g[(i * n + j) * h..(i * n + j + 1) * h], dst);
                        }
                    }
                }
                if let Some(gq) = self.slot(grads, *q) {
                    for i in 0..n {
                        for j in 0..n {
                            axpy(R::one(), &g[(i * n + j) * h..(i * n + j + 1) * h], &mut gq[j * h..(j + 1) * h]);
                        }
                    }
                }
            }
            Op::SymPairs(x) => {
                let s = self.shape(*x);
                let (n, c) = (pair_side(s).unwrap_or(0), s[1]);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let (ij, ji) = ((i * n + j) * c, (j * n + i) * c);
                            for ch in 0..c {
                                gx[ij + ch] += g[ij + ch] + g[ji + ch];
                            }
                        }
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                labels,
                mask,
                count,
            } => {
                let x = self.value(*logits).data();
                let scale = g[0] / *count;
                if let Some(gl) = self.slot(grads, *logits) {
                    for k in 0..x.len() {
                        if mask[k] != R::zero() {
                            gl[k] += scale * (sigmoid(x[k]) - labels[k]);
                        }
                    }
                }
            }
        }
    }

    fn reduce_broadcast(&self, grads: &mut [Option<Vec<R>>], v: Var, g: &[R], sign: R) {
        if let Some(gv) = self.slot(grads, v) {
            if gv.len() == g.len() {
                axpy(sign, g, gv);
            } else {
                let total: R = g.iter().copied().sum();
                gv[0] += sign * total;
            }
        }
    }

    fn channel_message_backward(&self, g: &[R], adj: Var, z: Var, eps: Var, grads: &mut [Option<Vec<R>>]) {
        let (n, f) = (self.shape(z)[0], self.shape(z)[1]);
        let c = self.shape(adj)[1];
        let width = c * f;
        let a = self.value(adj).data();
        let zd = self.value(z).data();
        let self_gain = R::one() + self.value(eps).data()[0];
        if let Some(ga) = self.slot(grads, adj) {
            // per node i: [C, F]·Zᵀ gives the [C, n] block of d adj[i, ·, ·]
            let zt = self.value(z).transposed();
            let mut block = vec![R::zero(); c * n];
            for i in 0..n {
                block.iter_mut().for_each(|b| *b = R::zero());
                matmul_kernel(&g[i * width..(i + 1) * width], zt.data(), &mut block, c, f, n);
                for j in 0..n {
                    for ch in 0..c {
                        ga[(i * n + j) * c + ch] += block[ch * n + j];
                    }
                }
            }
        }
        if let Some(gz) = self.slot(grads, z) {
            for i in 0..n {
                let gi = &g[i * width..(i + 1) * width];
                for j in 0..n {
                    let dst = &mut gz[j * f..(j + 1) * f];
                    for ch in 0..c {
                        let w = a[(i * n + j) * c + ch];
                        if w != R::zero() {
                            axpy(w, &gi[ch * f..(ch + 1) * f], dst);
                        }
                    }
                }
                let dst = &mut gz[i * f..(i + 1) * f];
                for ch in 0..c {
                    axpy(self_gain, &gi[ch * f..(ch + 1) * f], dst);
                }
            }
        }
        if let Some(ge) = self.slot(grads, eps) {
            let mut total = R::zero();
            for i in 0..n {
                let zi = &zd[i * f..(i + 1) * f];
                for ch in 0..c {
                    total += dot(&g[i * width + ch * f..i * width + (ch + 1) * f], zi);
                }
            }
            ge[0] += total;
        }
    }

    /// Gradients of every parameter leaf on this tape.
    ///
    /// A parameter placed on the tape more than once gets the sum.
    pub fn param_grads(&self) -> ParamGrads<R> {
        let mut out: Vec<(ParamId, Tensor<R>)> = Vec::new();
        for node in &self.nodes {
            let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &node.grad) else {
                continue;
            };
            match out.iter_mut().find(|(pid, _)| pid == id) {
                Some((_, acc)) => {
                    for (d, &s) in acc.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                None => out.push((*id, g.clone())),
            }
        }
        ParamGrads { grads: out }
    }
}

fn pair_side(shape: &[usize]) -> Option<usize> {
    if shape.len() != 2 {
        return None;
    }
    let n = (shape[0] as f64).sqrt().round() as usize;
    (n * n == shape[0]).then_some(n)
}

#[inline]
pub(crate) fn elu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut s = R::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += alpha * s;
    }
}

/// `out += a·b` for row-major `a: [m, k]`, `b: [k, n]`, four rows at a time.
fn matmul_kernel<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    let blocked = m - m % 4;
    for (i, rows) in out[..blocked * n].chunks_exact_mut(4 * n).enumerate() {
        let (r0, rest) = rows.split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        let a0 = &a[4 * i * k..(4 * i + 1) * k];
        let a1 = &a[(4 * i + 1) * k..(4 * i + 2) * k];
        let a2 = &a[(4 * i + 2) * k..(4 * i + 3) * k];
        let a3 = &a[(4 * i + 3) * k..(4 * i + 4) * k];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            for j in 0..n {
                let v = bp[j];
                r0[j] += x0 * v;
                r1[j] += x1 * v;
                r2[j] += x2 * v;
                r3[j] += x3 * v;
            }
        }
    }
    for i in blocked..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], row);
        }
    }
}

/// `out += aᵀ·g` for `a: [m, k]`, `g: [m, n]`, `out: [k, n]`.
fn matmul_at_kernel<R: Real>(a: &[R], g: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    let blocked = m - m % 4;
    for i in (0..blocked).step_by(4) {
        let g0 = &g[i * n..(i + 1) * n];
        let g1 = &g[(i + 1) * n..(i + 2) * n];
        let g2 = &g[(i + 2) * n..(i + 3) * n];
        let g3 = &g[(i + 3) * n..(i + 4) * n];
        for p in 0..k {
            let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += x0 * g0[j] + x1 * g1[j] + x2 * g2[j] + x3 * g3[j];
            }
        }
    }
    for i in blocked..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], gi, &mut out[p * n..(p + 1) * n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        let mut tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0));
        let b = tape.constant(Tensor::full(&[3, 2], 1.0));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Tensor::full(&[2, 2], 3.0));
    }

    #[test]
    fn matmul_shape_error_names_primitive() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0f64), 0.0);
        assert!((elu(-1e3f64) + 1.0).abs() < 1e-12);
        assert_eq!(elu(2.5f64), 2.5);
    }

    #[test]
    fn concat_feature_axis() {
        let mut tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::zeros(&[4, 2]));
        let b = tape.constant(Tensor::zeros(&[4, 3]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[4, 5]);
        let bad = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0f64), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), Some(6.0));
        // repeated backward accumulates
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), Some(12.0));
    }

    #[test]
    fn unused_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0f64), true);
        let y = tape.leaf(Tensor::scalar(5.0f64), true);
        let l = tape.sq_frobenius(x);
        tape.backward(l).unwrap();
        assert!(tape.grad(y).map_or(true, |g| g.item() == Some(0.0)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let mut tape = Tape::no_grad();
        let x = tape.leaf(Tensor::scalar(2.0f64), true);
        let y = tape.mul(x, x).unwrap();
        assert!(!tape.requires_grad(y));
        tape.backward(y).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn sym_pairs_is_symmetric_with_zero_diagonal() {
        let mut tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[9, 2], |k| (k as f64).sin()));
        let s = tape.sym_pairs(x).unwrap();
        let v = tape.value(s);
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..2 {
                    assert_eq!(v.data()[(i * 3 + j) * 2 + c], v.data()[(j * 3 + i) * 2 + c]);
                }
            }
            assert_eq!(v.data()[(i * 3 + i) * 2], 0.0);
        }
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 2]), true);
        let labels = t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
        let mask = t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
        let l = tape.bce_with_logits(logits, &labels, &mask).unwrap();
        assert!((tape.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        tape.backward(l).unwrap();
        // (sigmoid(0) - 1) / 2 on the two masked label-1 entries
        assert_eq!(tape.grad(logits).unwrap().data(), &[0.0, -0.25, -0.25, 0.0]);
    }
}
