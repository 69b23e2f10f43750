use super::conv::{col2im_add, for_each_strided, im2col, pool_extent, strides, ConvGeom};
use super::graph::{Node, Var};
use super::{gemm, split_axis, Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Sum,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const UNIT: Conv2dSpec = Conv2dSpec { stride: 1, padding: 0 };

    /// Stride 1 with `k / 2` padding, which keeps the spatial size for odd `k`.
    pub fn same(k: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: k / 2,
        }
    }
}

pub(crate) enum Op<F> {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, F),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Reshape(usize),
    Expand(usize),
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        cols: Vec<F>,
    },
    Pool2d {
        x: usize,
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    },
    GlobalPool {
        x: usize,
        kind: PoolKind,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: Option<usize>,
        beta: Option<usize>,
        axis: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
        count: usize,
    },
    SmoothL1 {
        x: usize,
        target: Vec<F>,
    },
}

impl<F> Op<F> {
    pub(crate) fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Conv2d { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::LayerNorm { x, gamma, beta, .. } => [Some(*x), *gamma, *beta].into_iter().flatten().collect(),
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Reshape(x)
            | Op::Expand(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::Pool2d { x, .. }
            | Op::GlobalPool { x, .. }
            | Op::Softmax { x, .. }
            | Op::SumAxis { x, .. }
            | Op::SmoothL1 { x, .. } => vec![*x],
        }
    }
}

fn same_shape<F: Float>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    Ok(())
}

impl<'g, F: Float> Var<'g, F> {
    fn unary(self, f: impl Fn(F) -> F, op: Op<F>) -> Var<'g, F> {
        let out = {
            let x = self.g.value(self.id);
            Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
        };
        self.g.push(out, op)
    }

    fn binary(self, other: Var<'g, F>, name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var<'g, F>> {
        let out = {
            let a = self.g.value(self.id);
            let b = self.g.value(other.id);
            same_shape(name, &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.g.push(out, op))
    }

    pub fn add(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g, F> {
        let s = F::cast(s);
        self.unary(|v| v + s, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, s: f64) -> Var<'g, F> {
        let s = F::cast(s);
        self.unary(|v| v * s, Op::MulScalar(self.id, s))
    }

    pub fn neg(self) -> Var<'g, F> {
        self.mul_scalar(-1.0)
    }

    pub fn relu(self) -> Var<'g, F> {
        self.unary(|v| if v > F::zero() { v } else { F::zero() }, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, F> {
        self.unary(|v| F::one() / (F::one() + (-v).exp()), Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'g, F> {
        self.unary(|v| v.tanh(), Op::Tanh(self.id))
    }

    /// Matrix product of `(m,k)·(k,n)`, or batched `(b,m,k)·(b,k,n)`.
    pub fn matmul(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        let out = {
            let a = self.g.value(self.id);
            let b = self.g.value(other.id);
            let (sa, sb) = (a.shape(), b.shape());
            let (batch, m, k, n) = match (sa.len(), sb.len()) {
                (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1]),
                (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (sa[0], sa[1], sa[2], sb[2]),
                _ => return Err(Error::shape("matmul", sa, sb)),
            };
            let mut c = vec![F::zero(); batch * m * n];
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[bi * m * k..],
                    false,
                    &b.data()[bi * k * n..],
                    false,
                    &mut c[bi * m * n..],
                    F::zero(),
                );
            }
            let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
            (Tensor::new(&shape, c)?, Op::MatMul {
                a: self.id,
                b: other.id,
                batch,
                m,
                k,
                n,
            })
        };
        Ok(self.g.push(out.0, out.1))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'g, F>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            let shape = x.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::shape("permute", shape, perm));
            }
            permute_tensor(&x, perm)
        };
        Ok(self.g.push(out, Op::Permute {
            x: self.id,
            perm: perm.to_vec(),
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, F>> {
        let out = self.value().reshaped(shape)?;
        Ok(self.g.push(out, Op::Reshape(self.id)))
    }

    /// Repeats size-1 axes up to `shape` (same rank).
    pub fn expand(self, shape: &[usize]) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            let xs = x.shape();
            if xs.len() != shape.len() || xs.iter().zip(shape).any(|(&a, &b)| a != b && a != 1) || shape.contains(&0) {
                return Err(Error::shape("expand", xs, shape));
            }
            let in_strides = broadcast_strides(xs);
            let mut data = vec![F::zero(); shape.iter().product()];
            for_each_strided(shape, &in_strides, |o, i| data[o] = x.data()[i]);
            Tensor::new(shape, data)?
        };
        Ok(self.g.push(out, Op::Expand(self.id)))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(parts: &[Var<'g, F>], axis: usize) -> Result<Var<'g, F>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", &[], &[]))?;
        let g = first.g;
        let out = {
            let vals: Vec<_> = parts.iter().map(|p| g.value(p.id)).collect();
            let s0 = vals[0].shape().to_vec();
            check_axis("concat", &s0, axis)?;
            let mut total = 0;
            for v in &vals {
                let s = v.shape();
                if s.len() != s0.len() || s.iter().zip(&s0).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                    return Err(Error::shape("concat", &s0, s));
                }
                total += s[axis];
            }
            let (outer, _, inner) = split_axis(&s0, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &vals {
                    let len = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
                }
            }
            let mut shape = s0;
            shape[axis] = total;
            Tensor::new(&shape, data)?
        };
        Ok(g.push(out, Op::Concat {
            xs: parts.iter().map(|p| p.id).collect(),
            axis,
        }))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            let s = x.shape();
            check_axis("slice", s, axis)?;
            if start >= end || end > s[axis] {
                return Err(Error::shape("slice", s, &[start, end]));
            }
            let (outer, len, inner) = split_axis(s, axis);
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = s.to_vec();
            shape[axis] = end - start;
            Tensor::new(&shape, data)?
        };
        Ok(self.g.push(out, Op::Slice {
            x: self.id,
            axis,
            start,
        }))
    }

    /// 2-D convolution of `(C,H,W)` with weights `(O,C,kh,kw)` and optional
    /// bias `(O)`.
    pub fn conv2d(self, w: Var<'g, F>, b: Option<Var<'g, F>>, spec: Conv2dSpec) -> Result<Var<'g, F>> {
        let g = self.g;
        let (out, op) = {
            let x = g.value(self.id);
            let wt = g.value(w.id);
            let (xs, ws) = (x.shape(), wt.shape());
            if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] {
                return Err(Error::shape("conv2d", xs, ws));
            }
            let geom = ConvGeom::new(xs[0], xs[1], xs[2], ws[2], ws[3], spec.stride, spec.padding)
                .ok_or_else(|| Error::shape("conv2d", xs, ws))?;
            let o = ws[0];
            let cols = if geom.is_pointwise() { Vec::new() } else { im2col(x.data(), &geom) };
            let src = if geom.is_pointwise() { x.data() } else { &cols[..] };
            let mut y = vec![F::zero(); o * geom.cols()];
            gemm(o, geom.rows(), geom.cols(), wt.data(), false, src, false, &mut y, F::zero());
            if let Some(b) = b {
                let bt = g.value(b.id);
                if bt.shape() != [o] {
                    return Err(Error::shape("conv2d bias", bt.shape(), &[o]));
                }
                for (oc, row) in y.chunks_mut(geom.cols()).enumerate() {
                    let bv = bt.data()[oc];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
            let keep_cols = g.requires_grad(&[w.id]) && !geom.is_pointwise();
            let op = Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
                cols: if keep_cols { cols } else { Vec::new() },
            };
            (Tensor::new(&[o, geom.ho, geom.wo], y)?, op)
        };
        Ok(g.push(out, op))
    }

    /// Ceil-mode pooling over `(C,H,W)`; `Avg` divides by the number of
    /// in-bounds elements of each window.
    pub fn pool2d(self, kind: PoolKind, kernel: usize, stride: usize) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            let s = x.shape();
            if s.len() != 3 || kernel == 0 || stride == 0 {
                return Err(Error::shape("pool2d", s, &[kernel, stride]));
            }
            let (c, h, w) = (s[0], s[1], s[2]);
            let (ho, wo) = (pool_extent(h, kernel, stride), pool_extent(w, kernel, stride));
            let mut y = vec![F::zero(); c * ho * wo];
            for ci in 0..c {
                for oy in 0..ho {
                    let ys = oy * stride..(oy * stride + kernel).min(h);
                    for ox in 0..wo {
                        let xs = ox * stride..(ox * stride + kernel).min(w);
                        let mut acc = F::zero();
                        for yy in ys.clone() {
                            for xx in xs.clone() {
                                acc += x.data()[(ci * h + yy) * w + xx];
                            }
                        }
                        if kind == PoolKind::Avg {
                            acc = acc / F::cast((ys.len() * xs.len()) as f64);
                        }
                        y[(ci * ho + oy) * wo + ox] = acc;
                    }
                }
            }
            Tensor::new(&[c, ho, wo], y)?
        };
        Ok(self.g.push(out, Op::Pool2d {
            x: self.id,
            kind,
            kernel,
            stride,
        }))
    }

    /// Pools every axis but the first: `(C, …)` → `(C)`.
    pub fn global_pool(self, kind: PoolKind) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            let s = x.shape();
            if s.len() < 2 {
                return Err(Error::shape("global_pool", s, &[]));
            }
            let per = x.numel() / s[0];
            let scale = if kind == PoolKind::Avg { F::one() / F::cast(per as f64) } else { F::one() };
            let data = x.data().chunks(per).map(|c| c.iter().copied().sum::<F>() * scale).collect();
            Tensor::new(&[s[0]], data)?
        };
        Ok(self.g.push(out, Op::GlobalPool { x: self.id, kind }))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            check_axis("softmax", x.shape(), axis)?;
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let mut y = x.data().to_vec();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| o * len * inner + l * inner + i;
                    let max = (0..len).map(|l| y[at(l)]).fold(F::neg_infinity(), F::max);
                    let mut sum = F::zero();
                    for l in 0..len {
                        let e = (y[at(l)] - max).exp();
                        y[at(l)] = e;
                        sum += e;
                    }
                    for l in 0..len {
                        y[at(l)] = y[at(l)] / sum;
                    }
                }
            }
            Tensor::new(x.shape(), y)?
        };
        Ok(self.g.push(out, Op::Softmax { x: self.id, axis }))
    }

    /// Normalizes along `axis` to zero mean and unit variance, then applies
    /// the optional per-position gain and offset (each of length
    /// `shape[axis]`).
    pub fn layer_norm(self, axis: usize, gamma: Option<Var<'g, F>>, beta: Option<Var<'g, F>>, eps: f64) -> Result<Var<'g, F>> {
        let g = self.g;
        let (out, op) = {
            let x = g.value(self.id);
            check_axis("layer_norm", x.shape(), axis)?;
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let gam = gamma.map(|v| g.value(v.id));
            let bet = beta.map(|v| g.value(v.id));
            for p in gam.iter().chain(bet.iter()) {
                if p.shape() != [len] {
                    return Err(Error::shape("layer_norm affine", p.shape(), &[len]));
                }
            }
            let eps = F::cast(eps);
            let nf = F::cast(len as f64);
            let mut xhat = vec![F::zero(); x.numel()];
            let mut inv_std = vec![F::zero(); outer * inner];
            let mut y = vec![F::zero(); x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| o * len * inner + l * inner + i;
                    let mean = (0..len).map(|l| x.data()[at(l)]).sum::<F>() / nf;
                    let var = (0..len).map(|l| (x.data()[at(l)] - mean).powi(2)).sum::<F>() / nf;
                    let is = F::one() / (var + eps).sqrt();
                    inv_std[o * inner + i] = is;
                    for l in 0..len {
                        let xh = (x.data()[at(l)] - mean) * is;
                        xhat[at(l)] = xh;
                        let gv = gam.as_ref().map_or(F::one(), |t| t.data()[l]);
                        let bv = bet.as_ref().map_or(F::zero(), |t| t.data()[l]);
                        y[at(l)] = xh * gv + bv;
                    }
                }
            }
            (Tensor::new(x.shape(), y)?, Op::LayerNorm {
                x: self.id,
                gamma: gamma.map(|v| v.id),
                beta: beta.map(|v| v.id),
                axis,
                xhat,
                inv_std,
            })
        };
        Ok(g.push(out, op))
    }

    /// Rows of a `(V, D)` table: `(len(ids), D)`.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'g, F>> {
        let out = {
            let t = self.g.value(self.id);
            let s = t.shape();
            if s.len() != 2 || ids.is_empty() {
                return Err(Error::shape("embedding", s, &[ids.len()]));
            }
            let d = s[1];
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= s[0] {
                    return Err(Error::TargetOutOfRange { target: id, classes: s[0] });
                }
                data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
            }
            Tensor::new(&[ids.len(), d], data)?
        };
        Ok(self.g.push(out, Op::Embedding {
            table: self.id,
            ids: ids.to_vec(),
        }))
    }

    pub fn sum(self) -> Var<'g, F> {
        let s = self.with_value(|x| x.data().iter().copied().sum::<F>());
        self.g.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g, F> {
        let s = self.with_value(|x| x.data().iter().copied().sum::<F>() / F::cast(x.numel() as f64));
        self.g.push(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Sums out `axis`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, F>> {
        let out = {
            let x = self.g.value(self.id);
            check_axis("sum_axis", x.shape(), axis)?;
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let mut y = vec![F::zero(); outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        y[o * inner + i] += x.data()[(o * len + l) * inner + i];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::new(&shape, y)?
        };
        Ok(self.g.push(out, Op::SumAxis { x: self.id, axis }))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `(T, K)` logits. Positions whose target equals `ignore` are excluded
    /// from both the sum and the count.
    pub fn cross_entropy(self, targets: &[usize], ignore: Option<usize>) -> Result<Var<'g, F>> {
        let (out, op) = {
            let x = self.g.value(self.id);
            let s = x.shape();
            if s.len() != 2 || s[0] != targets.len() {
                return Err(Error::shape("cross_entropy", s, &[targets.len()]));
            }
            let k = s[1];
            let mut probs = vec![F::zero(); x.numel()];
            let mut tgt = Vec::with_capacity(targets.len());
            let mut loss = F::zero();
            let mut count = 0usize;
            for (t, &y) in targets.iter().enumerate() {
                let row = &x.data()[t * k..(t + 1) * k];
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
                for (p, &v) in probs[t * k..(t + 1) * k].iter_mut().zip(row) {
                    *p = (v - max).exp() / sum;
                }
                if Some(y) == ignore {
                    tgt.push(None);
                    continue;
                }
                if y >= k {
                    return Err(Error::TargetOutOfRange { target: y, classes: k });
                }
                loss += sum.ln() + max - row[y];
                count += 1;
                tgt.push(Some(y));
            }
            let value = if count == 0 { F::zero() } else { loss / F::cast(count as f64) };
            (Tensor::scalar(value), Op::CrossEntropy {
                logits: self.id,
                targets: tgt,
                probs,
                count,
            })
        };
        Ok(self.g.push(out, op))
    }

    /// Mean smooth-L1 (transition at 1) between this tensor and a constant
    /// target.
    pub fn smooth_l1(self, target: &[F]) -> Result<Var<'g, F>> {
        let v = {
            let x = self.g.value(self.id);
            if x.numel() != target.len() {
                return Err(Error::shape("smooth_l1", x.shape(), &[target.len()]));
            }
            let half = F::cast(0.5);
            let sum: F = x
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p - t;
                    if d.abs() < F::one() {
                        half * d * d
                    } else {
                        d.abs() - half
                    }
                })
                .sum();
            sum / F::cast(x.numel() as f64)
        };
        Ok(self.g.push(Tensor::scalar(v), Op::SmoothL1 {
            x: self.id,
            target: target.to_vec(),
        }))
    }
}

fn broadcast_strides(in_shape: &[usize]) -> Vec<usize> {
    let st = strides(in_shape);
    in_shape.iter().zip(st).map(|(&d, s)| if d == 1 { 0 } else { s }).collect()
}

fn permute_tensor<F: Float>(x: &Tensor<F>, perm: &[usize]) -> Tensor<F> {
    let s = x.shape();
    let st = strides(s);
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let in_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let mut data = vec![F::zero(); x.numel()];
    for_each_strided(&out_shape, &in_strides, |o, i| data[o] = x.data()[i]);
    Tensor::new(&out_shape, data).expect("permuted shape")
}

fn slot<'a, F: Float>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], id: usize) -> Option<&'a mut Vec<F>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![F::zero(); nodes[id].value.numel()]))
}

fn add_into<F: Float>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], id: usize, g: impl Iterator<Item = F>) {
    if let Some(s) = slot(grads, nodes, id) {
        for (a, b) in s.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Propagates `gout` (gradient w.r.t. `out`) to the parents of `op`.
pub(crate) fn backward_op<F: Float>(
    op: &Op<F>,
    out: &Tensor<F>,
    gout: &[F],
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
) {
    let val = |id: usize| &nodes[id].value;
    match op {
        Op::Leaf | Op::Param => {}
        Op::Add(a, b) => {
            add_into(grads, nodes, *a, gout.iter().copied());
            add_into(grads, nodes, *b, gout.iter().copied());
        }
        Op::Sub(a, b) => {
            add_into(grads, nodes, *a, gout.iter().copied());
            add_into(grads, nodes, *b, gout.iter().map(|&g| -g));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            add_into(grads, nodes, *a, gout.iter().zip(vb).map(|(&g, &y)| g * y));
            add_into(grads, nodes, *b, gout.iter().zip(va).map(|(&g, &x)| g * x));
        }
        Op::AddScalar(x) | Op::Reshape(x) => add_into(grads, nodes, *x, gout.iter().copied()),
        Op::MulScalar(x, s) => add_into(grads, nodes, *x, gout.iter().map(|&g| g * *s)),
        Op::Relu(x) => {
            let o = out.data();
            add_into(grads, nodes, *x, gout.iter().zip(o).map(|(&g, &y)| if y > F::zero() { g } else { F::zero() }));
        }
        Op::Sigmoid(x) => {
            let o = out.data();
            add_into(grads, nodes, *x, gout.iter().zip(o).map(|(&g, &y)| g * y * (F::one() - y)));
        }
        Op::Tanh(x) => {
            let o = out.data();
            add_into(grads, nodes, *x, gout.iter().zip(o).map(|(&g, &y)| g * (F::one() - y * y)));
        }
        Op::MatMul { a, b, batch, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (va, vb) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(grads, nodes, *a) {
                for bi in 0..*batch {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, &gout[bi * m * n..], false, &vb[bi * k * n..], true, &mut ga[bi * m * k..], F::one());
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for bi in 0..*batch {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, &va[bi * m * k..], true, &gout[bi * m * n..], false, &mut gb[bi * k * n..], F::one());
                }
            }
        }
        Op::Permute { x, perm } => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let gt = Tensor::new(out.shape(), gout.to_vec()).expect("grad shape");
            let back = permute_tensor(&gt, &inv);
            add_into(grads, nodes, *x, back.data().iter().copied());
        }
        Op::Expand(x) => {
            let in_strides = broadcast_strides(val(*x).shape());
            if let Some(s) = slot(grads, nodes, *x) {
                for_each_strided(out.shape(), &in_strides, |o, i| s[i] += gout[o]);
            }
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &id in xs {
                let len = val(id).shape()[*axis];
                if let Some(s) = slot(grads, nodes, id) {
                    for o in 0..outer {
                        let src = &gout[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        for (a, &b) in s[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, len, inner) = split_axis(val(*x).shape(), *axis);
            let width = out.shape()[*axis];
            if let Some(s) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    let dst = &mut s[(o * len + start) * inner..(o * len + start + width) * inner];
                    for (a, &b) in dst.iter_mut().zip(&gout[o * width * inner..(o + 1) * width * inner]) {
                        *a += b;
                    }
                }
            }
        }
        Op::Conv2d { x, w, b, geom, cols } => {
            let o = out.shape()[0];
            let (rows, ncol) = (geom.rows(), geom.cols());
            if let Some(b) = b {
                if let Some(s) = slot(grads, nodes, *b) {
                    for (oc, row) in gout.chunks(ncol).enumerate() {
                        s[oc] += row.iter().copied().sum::<F>();
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *w) {
                let src = if geom.is_pointwise() { val(*x).data() } else { &cols[..] };
                // dW = dY · colsᵀ
                gemm(o, ncol, rows, gout, false, src, true, gw, F::one());
            }
            if nodes[*x].requires_grad {
                let wv = val(*w).data();
                if geom.is_pointwise() {
                    let gx = slot(grads, nodes, *x).expect("requires grad");
                    gemm(rows, o, ncol, wv, true, gout, false, gx, F::one());
                } else {
                    let mut dcols = vec![F::zero(); rows * ncol];
                    gemm(rows, o, ncol, wv, true, gout, false, &mut dcols, F::zero());
                    let gx = slot(grads, nodes, *x).expect("requires grad");
                    col2im_add(&dcols, geom, gx);
                }
            }
        }
        Op::Pool2d { x, kind, kernel, stride } => {
            let s = val(*x).shape();
            let (h, w) = (s[1], s[2]);
            let (c, ho, wo) = (out.shape()[0], out.shape()[1], out.shape()[2]);
            if let Some(gx) = slot(grads, nodes, *x) {
                for ci in 0..c {
                    for oy in 0..ho {
                        let ys = oy * stride..(oy * stride + kernel).min(h);
                        for ox in 0..wo {
                            let xs = ox * stride..(ox * stride + kernel).min(w);
                            let mut gv = gout[(ci * ho + oy) * wo + ox];
                            if *kind == PoolKind::Avg {
                                gv = gv / F::cast((ys.len() * xs.len()) as f64);
                            }
                            for yy in ys.clone() {
                                for xx in xs.clone() {
                                    gx[(ci * h + yy) * w + xx] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::GlobalPool { x, kind } => {
            let n = val(*x).numel();
            let per = n / gout.len();
            let scale = if *kind == PoolKind::Avg { F::one() / F::cast(per as f64) } else { F::one() };
            add_into(grads, nodes, *x, (0..n).map(|i| gout[i / per] * scale));
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(gx) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let dot: F = (0..len).map(|l| gout[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] += y[at(l)] * (gout[at(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, axis, xhat, inv_std } => {
            let (outer, len, inner) = split_axis(out.shape(), *axis);
            if let Some(bid) = beta {
                if let Some(s) = slot(grads, nodes, *bid) {
                    for (idx, &g) in gout.iter().enumerate() {
                        s[(idx / inner) % len] += g;
                    }
                }
            }
            if let Some(gid) = gamma {
                if let Some(s) = slot(grads, nodes, *gid) {
                    for (idx, (&g, &xh)) in gout.iter().zip(xhat).enumerate() {
                        s[(idx / inner) % len] += g * xh;
                    }
                }
            }
            if nodes[*x].requires_grad {
                let gam: Option<Vec<F>> = gamma.map(|g| val(g).data().to_vec());
                let gx = slot(grads, nodes, *x).expect("requires grad");
                let nf = F::cast(len as f64);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let dxh = |l: usize| gout[at(l)] * gam.as_ref().map_or(F::one(), |g| g[l]);
                        let mean_d: F = (0..len).map(dxh).sum::<F>() / nf;
                        let mean_dx: F = (0..len).map(|l| dxh(l) * xhat[at(l)]).sum::<F>() / nf;
                        let is = inv_std[o * inner + i];
                        for l in 0..len {
                            gx[at(l)] += is * (dxh(l) - mean_d - xhat[at(l)] * mean_dx);
                        }
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = out.shape()[1];
            if let Some(s) = slot(grads, nodes, *table) {
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        s[id * d + j] += gout[t * d + j];
                    }
                }
            }
        }
        Op::Sum(x) => {
            let n = val(*x).numel();
            add_into(grads, nodes, *x, std::iter::repeat_n(gout[0], n));
        }
        Op::Mean(x) => {
            let n = val(*x).numel();
            let g = gout[0] / F::cast(n as f64);
            add_into(grads, nodes, *x, std::iter::repeat_n(g, n));
        }
        Op::SumAxis { x, axis } => {
            let (_, len, inner) = split_axis(val(*x).shape(), *axis);
            let n = val(*x).numel();
            add_into(grads, nodes, *x, (0..n).map(|i| gout[(i / (len * inner)) * inner + i % inner]));
        }
        Op::CrossEntropy { logits, targets, probs, count } => {
            if *count == 0 {
                return;
            }
            let k = probs.len() / targets.len();
            let scale = gout[0] / F::cast(*count as f64);
            if let Some(s) = slot(grads, nodes, *logits) {
                for (t, tgt) in targets.iter().enumerate() {
                    let Some(y) = tgt else { continue };
                    for j in 0..k {
                        let onehot = if j == *y { F::one() } else { F::zero() };
                        s[t * k + j] += scale * (probs[t * k + j] - onehot);
                    }
                }
            }
        }
        Op::SmoothL1 { x, target } => {
            let xv = val(*x).data();
            let scale = gout[0] / F::cast(xv.len() as f64);
            add_into(
                grads,
                nodes,
                *x,
                xv.iter().zip(target).map(|(&p, &t)| {
                    let d = p - t;
                    let dd = if d.abs() < F::one() { d } else { d.signum() };
                    dd * scale
                }),
            );
        }
    }
}
