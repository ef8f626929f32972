use super::{gemm, numel, Tensor};
use crate::error::{shape_err, Error, Result};

/// Recorded operation with everything its backward pass needs.
pub(crate) enum Op {
    /// `a + tile(b)` where `b`'s shape is a suffix of `a`'s.
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    MatMul {
        a: Tensor,
        b: Tensor,
        trans_b: bool,
        batch: usize,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Tensor),
    Permute {
        x: Tensor,
        axes: Vec<usize>,
    },
    Relu(Tensor),
    Softplus(Tensor),
    Softmax {
        x: Tensor,
        outer: usize,
        len: usize,
        inner: usize,
    },
    RmsNorm {
        x: Tensor,
        gain: Tensor,
        inv_rms: Vec<f64>,
    },
    CrossEntropy {
        logits: Tensor,
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    Embedding {
        table: Tensor,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Tensor>,
    },
    Narrow {
        x: Tensor,
        offset: usize,
    },
    SumAxis {
        x: Tensor,
        outer: usize,
        len: usize,
        inner: usize,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Scale(x, _) | Op::Reshape(x) | Op::Relu(x) | Op::Softplus(x) => vec![x],
            Op::Permute { x, .. } | Op::Softmax { x, .. } | Op::Narrow { x, .. } | Op::SumAxis { x, .. } => vec![x],
            Op::RmsNorm { x, gain, .. } => vec![x, gain],
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Embedding { table, .. } => vec![table],
            Op::Concat { parts } => parts.iter().collect(),
        }
    }

    /// Propagate `g` (gradient w.r.t. this op's output) into the inputs.
    pub(crate) fn backward(&self, out: &[f64], g: &[f64]) {
        match self {
            Op::Add(a, b) => {
                a.accumulate(|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let bn = b.numel();
                b.accumulate(|gb| {
                    for chunk in g.chunks(bn) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                a.accumulate(|ga| {
                    for ((x, gy), bv) in ga.iter_mut().zip(g).zip(b.data()) {
                        *x += gy * bv;
                    }
                });
                b.accumulate(|gb| {
                    for ((x, gy), av) in gb.iter_mut().zip(g).zip(a.data()) {
                        *x += gy * av;
                    }
                });
            }
            Op::Scale(x, c) => x.accumulate(|gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += c * q)),
            Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                b_batched,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let bstride = if *b_batched { k * n } else { 0 };
                a.accumulate(|ga| {
                    for i in 0..*batch {
                        let gc = &g[i * m * n..(i + 1) * m * n];
                        let bb = &b.data()[i * bstride..i * bstride + k * n];
                        // dA = dC · Bᵀ ; B stored [k,n] (or [n,k] when trans_b)
                        gemm(m, n, k, gc, false, bb, !*trans_b, &mut ga[i * m * k..(i + 1) * m * k], 1.0);
                    }
                });
                b.accumulate(|gb| {
                    for i in 0..*batch {
                        let gc = &g[i * m * n..(i + 1) * m * n];
                        let aa = &a.data()[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * bstride..i * bstride + k * n];
                        if *trans_b {
                            // dBᵀ = dCᵀ · A : [n,k]
                            gemm(n, m, k, gc, true, aa, false, dst, 1.0);
                        } else {
                            // dB = Aᵀ · dC : [k,n]
                            gemm(k, m, n, aa, true, gc, false, dst, 1.0);
                        }
                    }
                });
            }
            Op::Reshape(x) => x.accumulate(|gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q)),
            Op::Permute { x, axes } => {
                let src_shape = x.shape().to_vec();
                x.accumulate(|gx| {
                    for_each_permuted(&src_shape, axes, |src, dst| gx[src] += g[dst]);
                });
            }
            Op::Relu(x) => x.accumulate(|gx| {
                for ((p, q), v) in gx.iter_mut().zip(g).zip(x.data()) {
                    if *v > 0.0 {
                        *p += q;
                    }
                }
            }),
            Op::Softplus(x) => x.accumulate(|gx| {
                for ((p, q), v) in gx.iter_mut().zip(g).zip(x.data()) {
                    *p += q / (1.0 + (-v).exp());
                }
            }),
            Op::Softmax { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                x.accumulate(|gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                let idx = base + j * inner;
                                dot += g[idx] * out[idx];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                gx[idx] += out[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let d = gain.numel();
                let xs = x.data();
                let gs = gain.data();
                gain.accumulate(|gg| {
                    for (row, inv) in inv_rms.iter().enumerate() {
                        for j in 0..d {
                            gg[j] += g[row * d + j] * xs[row * d + j] * inv;
                        }
                    }
                });
                x.accumulate(|gx| {
                    for (row, inv) in inv_rms.iter().enumerate() {
                        let r = row * d..(row + 1) * d;
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += g[r.start + j] * gs[j] * xs[r.start + j] * inv;
                        }
                        let mean = dot / d as f64;
                        for j in 0..d {
                            let xhat = xs[r.start + j] * inv;
                            gx[r.start + j] += inv * (g[r.start + j] * gs[j] - xhat * mean);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = logits.shape()[1];
                let scale = g[0] / *count as f64;
                logits.accumulate(|gl| {
                    for (row, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..v {
                            let onehot = if j == *t { 1.0 } else { 0.0 };
                            gl[row * v + j] += scale * (probs[row * v + j] - onehot);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = table.shape()[1];
                table.accumulate(|gt| {
                    for (row, id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[row * d + j];
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = p.numel();
                    p.accumulate(|gp| {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(a, b)| *a += b)
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, offset } => {
                x.accumulate(|gx| {
                    gx[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b)
                });
            }
            Op::SumAxis { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                x.accumulate(|gx| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                gx[(o * len + j) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
        }
    }
}

/// Calls `f(src_index, dst_index)` for every element of a tensor with
/// `src_shape` permuted by `axes` (dst axis `i` is src axis `axes[i]`).
fn for_each_permuted(src_shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = src_shape.len();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }
    let dst_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    let strides_in_dst_order: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total = numel(src_shape);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(src, dst);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides_in_dst_order[ax];
            if idx[ax] < dst_shape[ax] {
                break;
            }
            src -= strides_in_dst_order[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let len = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, len, inner)
}

impl Tensor {
    /// Elementwise sum. `other`'s shape must equal a suffix of `self`'s
    /// shape; it is then repeated across the leading axes.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if b.len() > a.len() || a[a.len() - b.len()..] != *b {
            return Err(shape_err!("add: {:?} cannot broadcast onto {:?}", b, a));
        }
        let bn = other.numel();
        let mut data = self.data().to_vec();
        if bn > 0 {
            for chunk in data.chunks_mut(bn) {
                chunk.iter_mut().zip(other.data()).for_each(|(x, y)| *x += y);
            }
        }
        Ok(Tensor::derived(a.to_vec(), data, &[self, other], || {
            Op::Add(self.clone(), other.clone())
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_err!("mul: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let data = self.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
        Ok(Tensor::derived(self.shape().to_vec(), data, &[self, other], || {
            Op::Mul(self.clone(), other.clone())
        }))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * c).collect();
        Tensor::derived(self.shape().to_vec(), data, &[self], || Op::Scale(self.clone(), c))
    }

    /// Batched matrix product `[.., m, k] · [.., k, n] -> [.., m, n]`. A rank-2
    /// right operand is shared across all batch entries.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ` over the last two axes, without materialising the
    /// transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err!("matmul needs rank >= 2 operands, got {:?} and {:?}", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(shape_err!(
                "matmul inner dimensions differ: {:?} x {:?}{} ({} vs {})",
                sa,
                sb,
                if trans_b { "ᵀ" } else { "" },
                k,
                kb
            ));
        }
        let batch_dims = &sa[..sa.len() - 2];
        let b_batched = sb.len() > 2;
        if b_batched && sb[..sb.len() - 2] != *batch_dims {
            return Err(shape_err!("matmul batch dimensions differ: {:?} vs {:?}", sa, sb));
        }
        let batch = numel(batch_dims);
        let mut data = vec![0.0; batch * m * n];
        let bstride = if b_batched { k * n } else { 0 };
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.data()[i * m * k..(i + 1) * m * k],
                false,
                &other.data()[i * bstride..i * bstride + k * n],
                trans_b,
                &mut data[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let mut shape = batch_dims.to_vec();
        shape.extend([m, n]);
        Ok(Tensor::derived(shape, data, &[self, other], || Op::MatMul {
            a: self.clone(),
            b: other.clone(),
            trans_b,
            batch,
            b_batched,
            m,
            k,
            n,
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(shape_err!("reshape {:?} -> {:?} changes element count", self.shape(), shape));
        }
        Ok(Tensor::derived(shape.to_vec(), self.data().to_vec(), &[self], || {
            Op::Reshape(self.clone())
        }))
    }

    /// Reorder axes: result axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut check = axes.to_vec();
        check.sort_unstable();
        if check != (0..rank).collect::<Vec<_>>() {
            return Err(shape_err!("permute axes {:?} invalid for rank {}", axes, rank));
        }
        let mut data = vec![0.0; self.numel()];
        let src = self.data();
        for_each_permuted(self.shape(), axes, |s, d| data[d] = src[s]);
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Ok(Tensor::derived(shape, data, &[self], || Op::Permute {
            x: self.clone(),
            axes: axes.to_vec(),
        }))
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(shape_err!("transpose needs rank >= 2, got {:?}", self.shape()));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.max(0.0)).collect();
        Tensor::derived(self.shape().to_vec(), data, &[self], || Op::Relu(self.clone()))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p()).collect();
        Tensor::derived(self.shape().to_vec(), data, &[self], || Op::Softplus(self.clone()))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err!("softmax axis {} out of range for {:?}", axis, self.shape()));
        }
        if self.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(x[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[base + j * inner] /= sum;
                }
            }
        }
        Ok(Tensor::derived(self.shape().to_vec(), data, &[self], || Op::Softmax {
            x: self.clone(),
            outer,
            len,
            inner,
        }))
    }

    /// `x / sqrt(mean(x²) + eps) * gain` over the last axis.
    pub fn rms_norm(&self, gain: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| shape_err!("rms_norm on a scalar"))?;
        if gain.shape() != [d] {
            return Err(shape_err!("rms_norm gain {:?} does not match last axis {}", gain.shape(), d));
        }
        let rows = self.numel() / d.max(1);
        let x = self.data();
        let mut inv_rms = Vec::with_capacity(rows);
        let mut data = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64 + eps;
            let inv = if ms > 0.0 { 1.0 / ms.sqrt() } else { 0.0 };
            inv_rms.push(inv);
            for j in 0..d {
                data[r * d + j] = row[j] * inv * gain.data()[j];
            }
        }
        Ok(Tensor::derived(self.shape().to_vec(), data, &[self, gain], || Op::RmsNorm {
            x: self.clone(),
            gain: gain.clone(),
            inv_rms,
        }))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[n, V]` logits. Rows whose target equals `ignore_index` are skipped;
    /// if every row is skipped the loss is 0.
    pub fn cross_entropy(&self, targets: &[usize], ignore_index: Option<usize>) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err!("cross_entropy expects [n, V] logits, got {:?}", self.shape()));
        }
        let (n, v) = (self.shape()[0], self.shape()[1]);
        if targets.len() != n {
            return Err(shape_err!("cross_entropy: {} targets for {} rows", targets.len(), n));
        }
        let x = self.data();
        let mut probs = vec![0.0; n * v];
        let mut kept = Vec::with_capacity(n);
        let mut total = 0.0;
        let mut count = 0;
        for (row, &t) in targets.iter().enumerate() {
            if Some(t) == ignore_index {
                kept.push(None);
                continue;
            }
            if t >= v {
                return Err(Error::Index(format!("target {t} out of range for {v} classes (row {row})")));
            }
            let logits = &x[row * v..(row + 1) * v];
            if logits.iter().any(|l| l.is_nan()) {
                return Err(Error::Numeric(format!("NaN logit in row {row}")));
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..v {
                probs[row * v + j] = (logits[j] - lse).exp();
            }
            total += lse - logits[t];
            count += 1;
            kept.push(Some(t));
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(Tensor::derived(Vec::new(), vec![loss], &[self], || Op::CrossEntropy {
            logits: self.clone(),
            probs,
            targets: kept,
            count,
        }))
    }

    /// Gather rows of a `[V, d]` table.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err!("embedding table must be [V, d], got {:?}", self.shape()));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("embedding id {id} out of range for table of {v} rows")));
            }
            data.extend_from_slice(&self.data()[id * d..(id + 1) * d]);
        }
        Ok(Tensor::derived(vec![ids.len(), d], data, &[self], || Op::Embedding {
            table: self.clone(),
            ids: ids.to_vec(),
        }))
    }

    /// Concatenate along the first axis.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        if first.rank() == 0 {
            return Err(shape_err!("concat of scalars"));
        }
        let tail = &first.shape()[1..];
        let mut rows = 0;
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[1..] != tail {
                return Err(shape_err!("concat: {:?} incompatible with {:?}", p.shape(), first.shape()));
            }
            rows += p.shape()[0];
        }
        let mut data = Vec::with_capacity(rows * numel(tail));
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::derived(shape, data, &refs, || Op::Concat { parts: parts.to_vec() }))
    }

    /// Rows `start..start + len` of the first axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor> {
        let rows = *self.shape().first().ok_or_else(|| shape_err!("narrow on a scalar"))?;
        if start + len > rows {
            return Err(shape_err!("narrow {}..{} out of range for {} rows", start, start + len, rows));
        }
        let row = numel(&self.shape()[1..]);
        let offset = start * row;
        let data = self.data()[offset..offset + len * row].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Ok(Tensor::derived(shape, data, &[self], || Op::Narrow {
            x: self.clone(),
            offset,
        }))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err!("sum_axis {} out of range for {:?}", axis, self.shape()));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::derived(shape, data, &[self], || Op::SumAxis {
            x: self.clone(),
            outer,
            len,
            inner,
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| shape_err!("mean_axis {} out of range for {:?}", axis, self.shape()))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        let flat = self.reshape(&[self.numel()]).expect("flatten");
        flat.sum_axis(0).expect("sum over flat axis")
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }
}
