//! FLOAT32 reference kernels. Spatial tensors are `[H, W, C]`, dense
//! weights `[in, out]`, conv weights `[kh, kw, cin, cout]`, depthwise
//! weights `[kh, kw, c]`. Sums accumulate in f64 in a fixed order.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{num_elements, shape_err, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent and leading pad along one axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

fn hwc(t: &Tensor, what: &str) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err!("{what} expects [H, W, C], got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Geometry {
    pub fn new(
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        padding: Padding,
    ) -> Result<Self, TensorError> {
        let (oh, ph) = conv_extent(h, kh, sh, padding)
            .ok_or_else(|| shape_err!("kernel {kh}x{kw} stride {sh}x{sw} does not fit {h}x{w}"))?;
        let (ow, pw) = conv_extent(w, kw, sw, padding)
            .ok_or_else(|| shape_err!("kernel {kh}x{kw} stride {sh}x{sw} does not fit {h}x{w}"))?;
        Ok(Self { h, w, oh, ow, kh, kw, sh, sw, ph, pw })
    }

    /// Input coordinate for output `o`, kernel tap `k`, or `None` in the padding.
    #[inline]
    pub fn in_y(&self, o: usize, k: usize) -> Option<usize> {
        let y = (o * self.sh + k).checked_sub(self.ph)?;
        (y < self.h).then_some(y)
    }

    #[inline]
    pub fn in_x(&self, o: usize, k: usize) -> Option<usize> {
        let x = (o * self.sw + k).checked_sub(self.pw)?;
        (x < self.w).then_some(x)
    }
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor, TensorError> {
    let (h, w, cin) = hwc(input, "conv2d")?;
    let [kh, kw, wcin, cout] = *weights.shape() else {
        return Err(shape_err!("conv2d weights must be [kh, kw, cin, cout], got {:?}", weights.shape()));
    };
    if wcin != cin {
        return Err(shape_err!("conv2d input has {cin} channels, weights expect {wcin}"));
    }
    check_bias(bias, cout)?;
    let g = Geometry::new((h, w), (kh, kw), stride, padding)?;
    let x = input.as_f32()?;
    let wt = weights.as_f32()?;
    let b = bias.map(|b| b.as_f32()).transpose()?;
    let mut out = vec![0f32; g.oh * g.ow * cout];
    let mut acc = vec![0f64; cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            match b {
                Some(b) => acc.iter_mut().zip(b).for_each(|(a, &v)| *a = v as f64),
                None => acc.iter_mut().for_each(|a| *a = 0.0),
            }
            for ky in 0..kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let px = &x[(iy * w + ix) * cin..][..cin];
                    let wbase = (ky * kw + kx) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        let xv = xv as f64;
                        let wrow = &wt[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv as f64;
                        }
                    }
                }
            }
            let o = &mut out[(oy * g.ow + ox) * cout..][..cout];
            o.iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f32);
        }
    }
    Tensor::from_f32(vec![g.oh, g.ow, cout], out)
}

pub fn depthwise_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc(input, "depthwise_conv2d")?;
    let [kh, kw, wc] = *weights.shape() else {
        return Err(shape_err!("depthwise weights must be [kh, kw, c], got {:?}", weights.shape()));
    };
    if wc != c {
        return Err(shape_err!("depthwise input has {c} channels, weights expect {wc}"));
    }
    check_bias(bias, c)?;
    let g = Geometry::new((h, w), (kh, kw), stride, padding)?;
    let x = input.as_f32()?;
    let wt = weights.as_f32()?;
    let b = bias.map(|b| b.as_f32()).transpose()?;
    let mut out = vec![0f32; g.oh * g.ow * c];
    let mut acc = vec![0f64; c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            match b {
                Some(b) => acc.iter_mut().zip(b).for_each(|(a, &v)| *a = v as f64),
                None => acc.iter_mut().for_each(|a| *a = 0.0),
            }
            for ky in 0..kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let px = &x[(iy * w + ix) * c..][..c];
                    let wrow = &wt[(ky * kw + kx) * c..][..c];
                    for ((a, &xv), &wv) in acc.iter_mut().zip(px).zip(wrow) {
                        *a += xv as f64 * wv as f64;
                    }
                }
            }
            let o = &mut out[(oy * g.ow + ox) * c..][..c];
            o.iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f32);
        }
    }
    Tensor::from_f32(vec![g.oh, g.ow, c], out)
}

fn check_bias(bias: Option<&Tensor>, n: usize) -> Result<(), TensorError> {
    if let Some(b) = bias {
        if b.shape() != [n] {
            return Err(shape_err!("bias must be [{n}], got {:?}", b.shape()));
        }
    }
    Ok(())
}

/// `y = xW + b` applied over the last axis (any leading shape).
pub fn dense(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, TensorError> {
    let [n, m] = *weights.shape() else {
        return Err(shape_err!("dense weights must be [in, out], got {:?}", weights.shape()));
    };
    let last = *input.shape().last().ok_or_else(|| shape_err!("dense on a scalar"))?;
    if last != n {
        return Err(shape_err!("dense expects last extent {n}, got {last}"));
    }
    check_bias(bias, m)?;
    let x = input.as_f32()?;
    let wt = weights.as_f32()?;
    let b = bias.map(|b| b.as_f32()).transpose()?;
    let rows = x.len() / n;
    let mut out = vec![0f32; rows * m];
    let mut acc = vec![0f64; m];
    for r in 0..rows {
        match b {
            Some(b) => acc.iter_mut().zip(b).for_each(|(a, &v)| *a = v as f64),
            None => acc.iter_mut().for_each(|a| *a = 0.0),
        }
        for (i, &xv) in x[r * n..(r + 1) * n].iter().enumerate() {
            let xv = xv as f64;
            for (a, &wv) in acc.iter_mut().zip(&wt[i * m..(i + 1) * m]) {
                *a += xv * wv as f64;
            }
        }
        out[r * m..(r + 1) * m].iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f32);
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = m;
    Tensor::from_f32(shape, out)
}

/// Parameter count of a dense layer with bias.
pub fn dense_param_count(n: usize, m: usize) -> usize {
    n * m + m
}

fn map(input: &Tensor, f: impl Fn(f32) -> f32) -> Result<Tensor, TensorError> {
    let v = input.as_f32()?.iter().map(|&x| f(x)).collect();
    Tensor::from_f32(input.shape().to_vec(), v)
}

pub fn relu6(input: &Tensor) -> Result<Tensor, TensorError> {
    map(input, |x| x.clamp(0.0, 6.0))
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    (1.0 / (1.0 + libm::exp(-(x as f64)))) as f32
}

pub fn sigmoid(input: &Tensor) -> Result<Tensor, TensorError> {
    map(input, sigmoid_scalar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Windowed max / mean over H and W. Average ignores padded cells.
pub fn pool2d(
    input: &Tensor,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc(input, "pool2d")?;
    let g = Geometry::new((h, w), window, stride, padding)?;
    let x = input.as_f32()?;
    let mut out = vec![0f32; g.oh * g.ow * c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut sum = 0f64;
                let mut count = 0usize;
                for ky in 0..window.0 {
                    let Some(iy) = g.in_y(oy, ky) else { continue };
                    for kx in 0..window.1 {
                        let Some(ix) = g.in_x(ox, kx) else { continue };
                        let v = x[(iy * w + ix) * c + ch];
                        best = best.max(v);
                        sum += v as f64;
                        count += 1;
                    }
                }
                out[(oy * g.ow + ox) * c + ch] = match kind {
                    PoolKind::Max => best,
                    PoolKind::Avg => (sum / count as f64) as f32,
                };
            }
        }
    }
    Tensor::from_f32(vec![g.oh, g.ow, c], out)
}

/// Mean over every axis but the last: `[.., C] -> [C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let c = *input.shape().last().ok_or_else(|| shape_err!("global pool on a scalar"))?;
    let x = input.as_f32()?;
    let rows = x.len() / c;
    let mut acc = vec![0f64; c];
    for r in 0..rows {
        acc.iter_mut().zip(&x[r * c..(r + 1) * c]).for_each(|(a, &v)| *a += v as f64);
    }
    Tensor::from_f32(vec![c], acc.into_iter().map(|a| (a / rows as f64) as f32).collect())
}

/// Numerically stable softmax over the last axis.
pub fn softmax(input: &Tensor) -> Result<Tensor, TensorError> {
    let n = *input.shape().last().ok_or_else(|| shape_err!("softmax on a scalar"))?;
    let x = input.as_f32()?;
    let mut out = vec![0f32; x.len()];
    for (row, o) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        softmax_row(row, o);
    }
    Tensor::from_f32(input.shape().to_vec(), out)
}

pub(crate) fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f64;
    let mut tmp = vec![0f64; row.len()];
    for (t, &v) in tmp.iter_mut().zip(row) {
        *t = libm::exp(v as f64 - max as f64);
        sum += *t;
    }
    for (o, t) in out.iter_mut().zip(tmp) {
        *o = (t / sum) as f32;
    }
}

/// Normalises each last-axis vector to zero mean / unit variance, then applies `gamma`, `beta`.
pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor, TensorError> {
    let d = *input.shape().last().ok_or_else(|| shape_err!("layer_norm on a scalar"))?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(shape_err!("layer_norm params must be [{d}]"));
    }
    let (g, b) = (gamma.as_f32()?, beta.as_f32()?);
    let x = input.as_f32()?;
    let mut out = vec![0f32; x.len()];
    for (row, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + eps as f64);
        for i in 0..d {
            o[i] = ((row[i] as f64 - mean) * inv * g[i] as f64 + b[i] as f64) as f32;
        }
    }
    Tensor::from_f32(input.shape().to_vec(), out)
}

/// Projection weights of one attention head (`[d, d]` matrices, `[d]` biases).
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub bk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

/// Intermediate tensors of an attention call, in execution order.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Scaled scores `QKᵀ/√d` before the softmax.
    pub scores: Tensor,
    pub probs: Tensor,
    pub context: Tensor,
}

/// `softmax(QKᵀ/√d)·V` followed by the output projection; no masking.
pub fn single_head_attention(tokens: &Tensor, w: AttentionWeights<'_>) -> Result<Tensor, TensorError> {
    single_head_attention_traced(tokens, w).map(|(out, _)| out)
}

pub fn single_head_attention_traced(
    tokens: &Tensor,
    w: AttentionWeights<'_>,
) -> Result<(Tensor, AttentionTrace), TensorError> {
    let [n, d] = *tokens.shape() else {
        return Err(shape_err!("attention expects [n, d] tokens, got {:?}", tokens.shape()));
    };
    for m in [w.wq, w.wk, w.wv, w.wo] {
        if m.shape() != [d, d] {
            return Err(shape_err!("attention projections must be [{d}, {d}], got {:?}", m.shape()));
        }
    }
    let q = dense(tokens, w.wq, Some(w.bq))?;
    let k = dense(tokens, w.wk, Some(w.bk))?;
    let v = dense(tokens, w.wv, Some(w.bv))?;
    let scores = matmul_transposed(&q, &k, 1.0 / libm::sqrt(d as f64))?;
    let probs = softmax(&scores)?;
    let context = matmul(&probs, &v)?;
    let out = dense(&context, w.wo, Some(w.bo))?;
    let _ = n;
    Ok((out, AttentionTrace { q, k, v, scores, probs, context }))
}

/// `scale · A Bᵀ` for `A: [n, d]`, `B: [m, d]`.
pub fn matmul_transposed(a: &Tensor, b: &Tensor, scale: f64) -> Result<Tensor, TensorError> {
    let (&[n, d], &[m, d2]) = (a.shape(), b.shape()) else {
        return Err(shape_err!("matmul_transposed expects rank-2 operands"));
    };
    if d != d2 {
        return Err(shape_err!("inner extents differ: {d} vs {d2}"));
    }
    let (x, y) = (a.as_f32()?, b.as_f32()?);
    let mut out = vec![0f32; n * m];
    for i in 0..n {
        for j in 0..m {
            let s: f64 = x[i * d..(i + 1) * d].iter().zip(&y[j * d..(j + 1) * d]).map(|(&p, &q)| p as f64 * q as f64).sum();
            out[i * m + j] = (s * scale) as f32;
        }
    }
    Tensor::from_f32(vec![n, m], out)
}

/// `A B` for `A: [n, k]`, `B: [k, m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let [_, k] = *a.shape() else { return Err(shape_err!("matmul expects rank-2 operands")) };
    if b.rank() != 2 || b.shape()[0] != k {
        return Err(shape_err!("matmul shapes {:?} x {:?}", a.shape(), b.shape()));
    }
    dense(a, b, None)
}

/// Sinusoidal position table `[n, d]` (`d` even).
pub fn sinusoidal_positions(n: usize, d: usize) -> Result<Tensor, TensorError> {
    if d == 0 || d % 2 != 0 || n == 0 {
        return Err(shape_err!("positional encoding needs n >= 1 and even d, got n={n}, d={d}"));
    }
    let mut out = vec![0f32; n * d];
    for pos in 0..n {
        for i in 0..d / 2 {
            let angle = pos as f64 / libm::pow(10_000.0, 2.0 * i as f64 / d as f64);
            out[pos * d + 2 * i] = libm::sin(angle) as f32;
            out[pos * d + 2 * i + 1] = libm::cos(angle) as f32;
        }
    }
    Tensor::from_f32(vec![n, d], out)
}

/// Broadcasts `b` when its shape is a suffix of `a`'s.
fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(shape_err!("cannot broadcast {sb:?} onto {sa:?}"));
    }
    let (x, y) = (a.as_f32()?, b.as_f32()?);
    let n = y.len();
    let out = x.iter().enumerate().map(|(i, &v)| f(v, y[i % n])).collect();
    Tensor::from_f32(sa.to_vec(), out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    broadcast_binary(a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    broadcast_binary(a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    broadcast_binary(a, b, |x, y| x * y)
}

pub fn squared_difference(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    broadcast_binary(a, b, |x, y| (x - y) * (x - y))
}

/// Broadcast output shape for the suffix rule, if compatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    (long[long.len() - short.len()..] == *short).then(|| long.to_vec())
}

/// Concatenation along the last axis.
pub fn concat(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = inputs.first().ok_or_else(|| shape_err!("concat of nothing"))?;
    let lead = &first.shape()[..first.rank() - 1];
    let mut widths = Vec::with_capacity(inputs.len());
    for t in inputs {
        if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
            return Err(shape_err!("concat operands disagree: {:?} vs {:?}", first.shape(), t.shape()));
        }
        widths.push(*t.shape().last().unwrap());
    }
    let total: usize = widths.iter().sum();
    let rows = num_elements(lead);
    let mut out = Vec::with_capacity(rows * total);
    let data: Vec<&[f32]> = inputs.iter().map(|t| t.as_f32()).collect::<Result<_, _>>()?;
    for r in 0..rows {
        for (d, &w) in data.iter().zip(&widths) {
            out.extend_from_slice(&d[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_f32(shape, out)
}

/// Axis permutation; `perm[i]` is the input axis placed at output axis `i`.
pub fn transpose(input: &Tensor, perm: &[usize]) -> Result<Tensor, TensorError> {
    let shape = input.shape();
    let out_shape = permuted_shape(shape, perm)?;
    let x = input.as_f32()?;
    let out = permute_indices(shape, perm).map(|i| x[i]).collect();
    Tensor::from_f32(out_shape, out)
}

pub fn permuted_shape(shape: &[usize], perm: &[usize]) -> Result<Vec<usize>, TensorError> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(shape_err!("permutation {perm:?} does not match rank {}", shape.len()));
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(shape_err!("invalid permutation {perm:?}"));
        }
        seen[p] = true;
    }
    Ok(perm.iter().map(|&p| shape[p]).collect())
}

/// Source flat index for each output position of a transpose.
pub(crate) fn permute_indices<'a>(shape: &'a [usize], perm: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total = num_elements(shape);
    let mut idx = vec![0usize; rank];
    (0..total).map(move |n| {
        if n > 0 {
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        idx.iter().zip(perm).map(|(&i, &p)| i * strides[p]).sum()
    })
}

/// `len` entries starting at `start` along `axis`.
pub fn slice(input: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor, TensorError> {
    let x = input.as_f32()?;
    let out = slice_indices(input.shape(), axis, start, len)?.map(|i| x[i]).collect();
    let mut shape = input.shape().to_vec();
    shape[axis] = len;
    Tensor::from_f32(shape, out)
}

pub(crate) fn slice_indices(
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Result<impl Iterator<Item = usize>, TensorError> {
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(shape_err!("slice {start}..{} on axis {axis} of {shape:?}", start + len));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let extent = shape[axis];
    Ok((0..outer).flat_map(move |o| {
        (start..start + len).flat_map(move |a| (0..inner).map(move |i| (o * extent + a) * inner + i))
    }))
}

/// Inference-time batch norm parameters for one channel axis.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
    pub eps: f32,
}

impl BatchNormParams<'_> {
    fn channel_affine(&self) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
        let (g, b, m, v) = (self.gamma.as_f32()?, self.beta.as_f32()?, self.mean.as_f32()?, self.var.as_f32()?);
        let c = g.len();
        if b.len() != c || m.len() != c || v.len() != c {
            return Err(shape_err!("batch norm parameter lengths differ"));
        }
        if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Numerical(alloc::format!("batch norm variance {bad} is not positive")));
        }
        let scale: Vec<f64> = (0..c).map(|i| g[i] as f64 / libm::sqrt(v[i] as f64 + self.eps as f64)).collect();
        let shift = (0..c).map(|i| b[i] as f64 - m[i] as f64 * scale[i]).collect();
        Ok((scale, shift))
    }
}

/// Per-channel affine over the last axis.
pub fn batch_norm(input: &Tensor, bn: BatchNormParams<'_>) -> Result<Tensor, TensorError> {
    let (scale, shift) = bn.channel_affine()?;
    let c = scale.len();
    if input.shape().last() != Some(&c) {
        return Err(shape_err!("batch norm over {c} channels, input {:?}", input.shape()));
    }
    let x = input.as_f32()?;
    let out = x.iter().enumerate().map(|(i, &v)| (v as f64 * scale[i % c] + shift[i % c]) as f32).collect();
    Tensor::from_f32(input.shape().to_vec(), out)
}

/// Folds a following batch norm into weights whose last axis is the output
/// channel (conv, depthwise and dense layouts all qualify).
pub fn fold_batchnorm(
    weights: &Tensor,
    bias: Option<&Tensor>,
    bn: BatchNormParams<'_>,
) -> Result<(Tensor, Tensor), TensorError> {
    let (scale, shift) = bn.channel_affine()?;
    let c = scale.len();
    if weights.shape().last() != Some(&c) {
        return Err(shape_err!("weights {:?} do not end in {c} channels", weights.shape()));
    }
    check_bias(bias, c)?;
    let w = weights.as_f32()?;
    let folded = w.iter().enumerate().map(|(i, &v)| (v as f64 * scale[i % c]) as f32).collect();
    let b = match bias {
        Some(b) => b.as_f32()?.to_vec(),
        None => vec![0.0; c],
    };
    let folded_bias = (0..c).map(|i| (b[i] as f64 * scale[i] + shift[i]) as f32).collect();
    Ok((Tensor::from_f32(weights.shape().to_vec(), folded)?, Tensor::from_f32(vec![c], folded_bias)?))
}

/// Squeeze-and-excitation weights: `[C, C/r]`, `[C/r]`, `[C/r, C]`, `[C]`.
#[derive(Debug, Clone, Copy)]
pub struct SeWeights<'a> {
    pub squeeze_w: &'a Tensor,
    pub squeeze_b: &'a Tensor,
    pub excite_w: &'a Tensor,
    pub excite_b: &'a Tensor,
}

/// Per-channel gates `sigmoid(W2·relu6(W1·avg(x)))`, in (0, 1).
pub fn se_gates(input: &Tensor, w: SeWeights<'_>) -> Result<Tensor, TensorError> {
    let pooled = global_avg_pool(input)?;
    let hidden = relu6(&dense(&pooled, w.squeeze_w, Some(w.squeeze_b))?)?;
    sigmoid(&dense(&hidden, w.excite_w, Some(w.excite_b))?)
}

pub fn se_block(input: &Tensor, w: SeWeights<'_>, reduction_ratio: usize) -> Result<Tensor, TensorError> {
    let (_, _, c) = hwc(input, "se_block")?;
    if reduction_ratio == 0 || c % reduction_ratio != 0 {
        return Err(shape_err!("{c} channels not divisible by reduction ratio {reduction_ratio}"));
    }
    if w.squeeze_w.shape() != [c, c / reduction_ratio] {
        return Err(shape_err!("squeeze weights must be [{c}, {}]", c / reduction_ratio));
    }
    mul(input, &se_gates(input, w)?)
}
