use std::borrow::Cow;

use rayon::prelude::*;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{gelu, gelu_grad, mismatch, sigmoid, softplus, Real, ShapeError, Tensor};

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    MixTokens {
        x: Var,
        a: Var,
    },
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(Var),
    Mse {
        pred: Var,
        diff: Vec<T>,
    },
    MaskedBce {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for one backward pass. Parameter leaves borrow
/// their tensors, so a frozen model can be evaluated from many threads, each
/// with its own tape.
pub struct Tape<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_suffix(full: &[usize], tail: &[usize]) -> bool {
    tail.len() <= full.len() && full[full.len() - tail.len()..] == *tail
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Trainable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// `a[..., k] · b[k, n] → [..., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &[sa, sb]));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); m * n];
        if k > 0 {
            gemm_nn(
                self.value(a).data(),
                self.value(b).data(),
                &mut out,
                m,
                k,
                n,
            );
        }
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data: out }),
            Op::MatMul(a, b),
            ng,
        ))
    }

    fn broadcast_binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, ShapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !is_suffix(sa, sb) {
            return Err(mismatch(op, &[sa, sb]));
        }
        let bd = self.value(b).data();
        let period = bd.len().max(1);
        let data = self
            .value(a)
            .data()
            .chunks(period)
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok(Tensor {
            shape: sa.to_vec(),
            data,
        })
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    /// Elementwise `a ⊙ b` with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.grad_of(&[a]);
        self.push(Cow::Owned(out), Op::Scale(a, c), ng)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, ShapeError> {
        let first = inputs
            .first()
            .map(|&v| self.shape(v).to_vec())
            .ok_or_else(|| mismatch("concat", &[]))?;
        if axis >= first.len() {
            return Err(mismatch("concat", &[&first]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(mismatch("concat", &[&first, s]));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let ng = self.grad_of(inputs);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data }),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, ShapeError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch("slice", &[&s, &[axis, start, len]]));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.grad_of(&[x]);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data }),
            Op::Slice {
                input: x,
                axis,
                start,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Reshape(x), ng))
    }

    /// Rows of `table[V, d]` picked by `indices`, shaped `prefix ++ [d]`.
    pub fn embedding(
        &mut self,
        table: Var,
        indices: &[usize],
        prefix: &[usize],
    ) -> Result<Var, ShapeError> {
        let st = self.shape(table);
        if st.len() != 2 || prefix.iter().product::<usize>() != indices.len() {
            return Err(mismatch("embedding", &[st, prefix]));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(ShapeError::Index {
                op: "embedding",
                index: bad,
                bound: v,
            });
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let mut shape = prefix.to_vec();
        shape.push(d);
        let ng = self.grad_of(&[table]);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data }),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Factored token mixing: with `x[..., N, d]` split into `n_h` feature
    /// heads and `a[n_h, N, N]`, `out[.., j, head h] = Σ_k a[h,k,j]·x[.., k, head h]`.
    pub fn mix_tokens(&mut self, x: Var, a: Var) -> Result<Var, ShapeError> {
        let (sx, sa) = (self.shape(x), self.shape(a));
        let ok = sx.len() >= 2
            && sa.len() == 3
            && sa[1] == sa[2]
            && sa[1] == sx[sx.len() - 2]
            && sa[0] > 0
            && sx[sx.len() - 1] % sa[0] == 0;
        if !ok {
            return Err(mismatch("mix_tokens", &[sx, sa]));
        }
        let (n_h, n) = (sa[0], sa[1]);
        let d = sx[sx.len() - 1];
        let dh = d / n_h;
        let xv = self.value(x).data();
        let av = self.value(a).data();
        let mut out = vec![T::zero(); xv.len()];
        let per = |(b, ob): (usize, &mut [T])| {
            let xb = &xv[b * n * d..(b + 1) * n * d];
            for j in 0..n {
                for h in 0..n_h {
                    let o = &mut ob[j * d + h * dh..j * d + (h + 1) * dh];
                    for k in 0..n {
                        let w = av[(h * n + k) * n + j];
                        if w == T::zero() {
                            continue;
                        }
                        for (ov, &xk) in o.iter_mut().zip(&xb[k * d + h * dh..k * d + (h + 1) * dh])
                        {
                            *ov += w * xk;
                        }
                    }
                }
            }
        };
        if n * d > 0 {
            if xv.len() * n >= 1 << 15 {
                out.par_chunks_mut(n * d).enumerate().for_each(per);
            } else {
                out.chunks_mut(n * d).enumerate().for_each(per);
            }
        }
        let shape = sx.to_vec();
        let ng = self.grad_of(&[x, a]);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data: out }),
            Op::MixTokens { x, a },
            ng,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let ng = self.grad_of(&[x]);
        self.push(Cow::Owned(out), Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.grad_of(&[x]);
        self.push(Cow::Owned(out), Op::Sigmoid(x), ng)
    }

    /// Normalizes over the last axis, then applies `gamma ⊙ x̂ + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, ShapeError> {
        let sx = self.shape(x);
        let d = sx.last().copied().unwrap_or(0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch(
                "layernorm",
                &[sx, self.shape(gamma), self.shape(beta)],
            ));
        }
        let shape = sx.to_vec();
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / d;
        let dn = T::c(d as f64);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + T::c(LN_EPS)).sqrt();
            rstd.push(r);
            for (i, &v) in row.iter().enumerate() {
                let xh = (v - mean) * r;
                xhat.push(xh);
                out.push(g[i] * xh + bt[i]);
            }
        }
        let ng = self.grad_of(&[x, gamma, beta]);
        Ok(self.push(
            Cow::Owned(Tensor { shape, data: out }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.grad_of(&[x]);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(x), ng)
    }

    /// Mean over rows of the squared Euclidean distance along the last axis.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, ShapeError> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.numel() == 0 {
            return Err(mismatch("mse_loss", &[p.shape(), target.shape()]));
        }
        let rows = T::c((p.numel() / p.last_dim()) as f64);
        let diff: Vec<T> = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / rows;
        let ng = self.grad_of(&[pred]);
        Ok(self.push(Cow::Owned(Tensor::scalar(loss)), Op::Mse { pred, diff }, ng))
    }

    /// `(1/B) Σ w·(softplus(z) − y·z)`: weighted binary cross-entropy of
    /// `sigmoid(z)` against `y`, with `B` the leading dimension.
    pub fn masked_bce_loss(
        &mut self,
        logits: Var,
        targets: &Tensor<T>,
        weights: &Tensor<T>,
    ) -> Result<Var, ShapeError> {
        let z = self.value(logits);
        if z.shape() != targets.shape() || z.shape() != weights.shape() || z.shape().is_empty() {
            return Err(mismatch(
                "masked_bce_loss",
                &[z.shape(), targets.shape(), weights.shape()],
            ));
        }
        let batch = T::c(z.shape()[0].max(1) as f64);
        let mut loss = T::zero();
        for ((&zi, &yi), &wi) in z.data().iter().zip(targets.data()).zip(weights.data()) {
            if wi != T::zero() {
                loss += wi * (softplus(zi) - yi * zi);
            }
        }
        loss = loss / batch;
        let ng = self.grad_of(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::MaskedBce {
                logits,
                targets: targets.data().to_vec(),
                weights: weights.data().to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, ShapeError> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or(ShapeError::UnknownVar(loss.0))?;
        if node.value.numel() != 1 {
            return Err(ShapeError::NotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor {
                    shape: self.nodes[v.0].value.shape().to_vec(),
                    data: delta,
                })
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<'a, T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.numel() / k.max(1);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(gd, bv.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(av.data(), gd, &mut db, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    let period = self.value(*b).numel().max(1);
                    let mut db = vec![T::zero(); self.value(*b).numel()];
                    for chunk in gd.chunks(period) {
                        for (d, &x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, gd.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let period = bv.len().max(1);
                if self.wants(*a) {
                    let da = gd
                        .chunks(period)
                        .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x * y))
                        .collect();
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for (gc, ac) in gd.chunks(period).zip(av.chunks(period)) {
                        for ((d, &x), &y) in db.iter_mut().zip(gc).zip(ac) {
                            *d += x * y;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gd.iter().map(|&x| x * *c).collect());
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                let row = g.shape()[*axis] * inner;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    if self.wants(v) {
                        let mut dv = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let base = o * row + offset;
                            dv.extend_from_slice(&gd[base..base + block]);
                        }
                        self.accumulate(grads, v, dv);
                    }
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input);
                let (outer, dim, inner) = axis_split(s, *axis);
                let len = g.shape()[*axis];
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for (a, &b) in dt[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&gd[r * d..(r + 1) * d])
                    {
                        *a += b;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::MixTokens { x, a } => self.mix_tokens_backward(*x, *a, gd, grads),
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(
                    grads,
                    *x,
                    gd.iter().zip(xv).map(|(&g, &x)| g * gelu_grad(x)).collect(),
                );
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(
                    grads,
                    *x,
                    gd.iter()
                        .zip(y)
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect(),
                );
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = self.value(*gamma).data();
                let d = gm.len();
                let dn = T::c(d as f64);
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for (gr, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for i in 0..d {
                            dg[i] += gr[i] * xr[i];
                            db[i] += gr[i];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                    self.accumulate(grads, *beta, db);
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(gd.len());
                    for ((gr, xr), &r) in gd.chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                        let dxhat: Vec<T> = gr.iter().zip(gm).map(|(&a, &b)| a * b).collect();
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for (&dh, &xh) in dxhat.iter().zip(xr) {
                            dx.push(r * (dh - mean_d - xh * mean_dx));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Mse { pred, diff } => {
                let p = self.value(*pred);
                let rows = T::c((p.numel() / p.last_dim()) as f64);
                let c = T::c(2.0) * gd[0] / rows;
                self.accumulate(grads, *pred, diff.iter().map(|&d| c * d).collect());
            }
            Op::MaskedBce {
                logits,
                targets,
                weights,
            } => {
                let z = self.value(*logits);
                let c = gd[0] / T::c(z.shape()[0].max(1) as f64);
                let dz = z
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&zi, &yi), &wi)| c * wi * (sigmoid(zi) - yi))
                    .collect();
                self.accumulate(grads, *logits, dz);
            }
        }
    }

    fn mix_tokens_backward(&self, x: Var, a: Var, gd: &[T], grads: &mut [Option<Tensor<T>>]) {
        let sa = self.shape(a);
        let (n_h, n) = (sa[0], sa[1]);
        let xv = self.value(x).data();
        let av = self.value(a).data();
        let d = self.value(x).last_dim();
        let dh = d / n_h;
        let batch = if n * d == 0 { 0 } else { xv.len() / (n * d) };
        let big = xv.len() * n >= 1 << 15;
        if self.wants(x) {
            let mut dx = vec![T::zero(); xv.len()];
            let per = |(b, db): (usize, &mut [T])| {
                let gb = &gd[b * n * d..(b + 1) * n * d];
                for k in 0..n {
                    for h in 0..n_h {
                        let o = &mut db[k * d + h * dh..k * d + (h + 1) * dh];
                        for j in 0..n {
                            let w = av[(h * n + k) * n + j];
                            if w == T::zero() {
                                continue;
                            }
                            for (ov, &gj) in
                                o.iter_mut().zip(&gb[j * d + h * dh..j * d + (h + 1) * dh])
                            {
                                *ov += w * gj;
                            }
                        }
                    }
                }
            };
            if n * d > 0 {
                if big {
                    dx.par_chunks_mut(n * d).enumerate().for_each(per);
                } else {
                    dx.chunks_mut(n * d).enumerate().for_each(per);
                }
            }
            self.accumulate(grads, x, dx);
        }
        if self.wants(a) {
            let mut da = vec![T::zero(); av.len()];
            // one row (h, k) of dA per task
            let per = |(hk, row): (usize, &mut [T])| {
                let (h, k) = (hk / n, hk % n);
                for b in 0..batch {
                    let xk = &xv[b * n * d + k * d + h * dh..b * n * d + k * d + (h + 1) * dh];
                    for (j, r) in row.iter_mut().enumerate() {
                        let gj = &gd[b * n * d + j * d + h * dh..b * n * d + j * d + (h + 1) * dh];
                        let mut acc = T::zero();
                        for (&p, &q) in xk.iter().zip(gj) {
                            acc += p * q;
                        }
                        *r += acc;
                    }
                }
            };
            if n > 0 {
                if big {
                    da.par_chunks_mut(n).enumerate().for_each(per);
                } else {
                    da.chunks_mut(n).enumerate().for_each(per);
                }
            }
            self.accumulate(grads, a, da);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::max_relative_error;
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Builds a graph from leaves, returns (loss, grads of the leaves).
    fn run(
        params: &[Tensor<f64>],
        build: &dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
    ) -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = build(&mut tape, &vars);
        let value = tape.value(loss).item();
        let mut g = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.take(v).unwrap()).collect())
    }

    fn check(mut params: Vec<Tensor<f64>>, build: &dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var) {
        let (_, grads) = run(&params, build);
        let err = max_relative_error(&mut params, &grads, 1e-3, |p| run(p, build).0);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn sum_gives_ones_and_zero_scale_gives_zeros() {
        let w = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng());
        let (_, g) = run(std::slice::from_ref(&w), &|t, v| t.sum(v[0]));
        assert!(g[0].data().iter().all(|&x| x == 1.0));
        let (_, g) = run(&[w], &|t, v| {
            let y = t.gelu(v[0]);
            let s = t.sum(y);
            t.scale(s, 0.0)
        });
        assert!(g[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_bad_roots() {
        let w = Tensor::<f64>::zeros(&[2]);
        let mut tape = Tape::new();
        let v = tape.param(&w);
        assert!(matches!(tape.backward(v), Err(ShapeError::NotScalar(_))));
        let tape: Tape<'_, f64> = Tape::new();
        assert!(matches!(
            tape.backward(Var(3)),
            Err(ShapeError::UnknownVar(3))
        ));
    }

    #[test]
    fn shape_errors_name_the_operands() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let mut tape = Tape::new();
        let (va, vb) = (tape.param(&a), tape.param(&b));
        let err = tape.matmul(va, vb).unwrap_err();
        assert_eq!(
            err.to_string(),
            "matmul: incompatible shapes [[2, 3], [4, 2]]"
        );
        assert!(tape.add(va, vb).is_err());
        assert!(tape.embedding(va, &[1], &[1]).is_ok());
        assert!(tape.embedding(va, &[5], &[1]).is_err());
    }

    #[test]
    fn layernorm_of_constant_row_is_bias() {
        let x = Tensor::<f64>::full(&[2, 5], 3.0);
        let g = Tensor::<f64>::full(&[5], 2.0);
        let b = Tensor::<f64>::from_f64(&[5], &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let mut tape = Tape::new();
        let (vx, vg, vb) = (tape.param(&x), tape.param(&g), tape.param(&b));
        let y = tape.layernorm(vx, vg, vb).unwrap();
        assert_eq!(&tape.value(y).data()[5..], b.data());
    }

    #[test]
    fn mse_on_matmul_matches_finite_differences() {
        let mut r = rng();
        let x = Tensor::<f64>::randn(&[5, 4], 1.0, &mut r);
        let w = Tensor::<f64>::randn(&[4, 3], 1.0, &mut r);
        let target = Tensor::<f64>::randn(&[5, 3], 1.0, &mut r);
        check(vec![x, w], &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            t.mse_loss(y, &target).unwrap()
        });
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut r = rng();
        let x = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut r);
        let w = Tensor::<f64>::randn(&[4, 4], 0.5, &mut r);
        let bias = Tensor::<f64>::randn(&[4], 0.5, &mut r);
        let a = Tensor::<f64>::randn(&[2, 3, 3], 0.5, &mut r);
        let k = Tensor::<f64>::randn(&[3, 3], 0.5, &mut r);
        let gamma = Tensor::<f64>::randn(&[4], 1.0, &mut r);
        let table = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
        let targets =
            Tensor::<f64>::from_f64(&[2, 5], &[1., 0., 1., 1., 0., 0., 1., 0., 1., 1.]).unwrap();
        let weights =
            Tensor::<f64>::from_f64(&[2, 5], &[1., 0., 0.5, 2., 1., 0., 1., 1., 0., 3.]).unwrap();
        check(vec![x, w, bias, a, k, gamma, table], &|t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add(h, v[2]).unwrap();
            let mask = t.mul(v[3], v[4]).unwrap();
            let h = t.mix_tokens(h, mask).unwrap();
            let h = t.gelu(h);
            let h = t.layernorm(h, v[5], v[2]).unwrap();
            let e = t.embedding(v[6], &[0, 2, 2, 1, 0, 1], &[2, 3]).unwrap();
            let h = t.mul(h, e).unwrap();
            let left = t.slice(h, 1, 0, 1).unwrap();
            let right = t.slice(h, 1, 2, 1).unwrap();
            let c = t.concat(&[left, right, left], 1).unwrap();
            let c = t.reshape(c, &[2, 12]).unwrap();
            let c = t.slice(c, 1, 3, 5).unwrap();
            let z = t.scale(c, 1.5);
            let s = t.sigmoid(z);
            let bce = t.masked_bce_loss(z, &targets, &weights).unwrap();
            let tot = t.sum(s);
            let bce = t.reshape(bce, &[1]).unwrap();
            let tot = t.reshape(tot, &[1]).unwrap();
            let out = t.concat(&[bce, tot], 0).unwrap();
            t.sum(out)
        });
    }

    #[test]
    fn mix_tokens_identity_heads() {
        let mut r = rng();
        let x = Tensor::<f32>::randn(&[3, 5, 4], 1.0, &mut r);
        let mut a = Tensor::<f32>::zeros(&[2, 5, 5]);
        for h in 0..2 {
            for i in 0..5 {
                a.data_mut()[(h * 5 + i) * 5 + i] = 1.0;
            }
        }
        let mut tape = Tape::new();
        let (vx, va) = (tape.param(&x), tape.param(&a));
        let y = tape.mix_tokens(vx, va).unwrap();
        assert_eq!(tape.value(y), &x);
    }
}
