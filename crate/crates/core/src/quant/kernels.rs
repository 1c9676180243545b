//! Integer kernels over per-tensor affine INT8 tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{
    num_elements, permute_indices, shape_err, slice_indices, softmax_row, Geometry, Padding, PoolKind,
    QuantParams, Tensor, TensorError,
};

/// Fixed-point multiplier: `real ≈ multiplier · 2^(shift − 31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantizer {
    pub multiplier: i32,
    pub shift: i32,
}

impl Requantizer {
    pub fn new(real: f64) -> Self {
        if !(real > 0.0) || !real.is_finite() {
            return Self { multiplier: 0, shift: 0 };
        }
        let (frac, exp) = libm::frexp(real);
        let mut m = libm::round(frac * (1u64 << 31) as f64) as i64;
        let mut shift = exp;
        if m == 1 << 31 {
            m /= 2;
            shift += 1;
        }
        Self { multiplier: m as i32, shift }
    }

    /// `round(x · real)`, ties away from zero.
    #[inline]
    pub fn apply(&self, x: i64) -> i64 {
        let product = x as i128 * self.multiplier as i128;
        let right = 31 - self.shift;
        let r = if right <= 0 {
            product << (-right).min(64)
        } else if right >= 127 {
            0
        } else {
            let half = 1i128 << (right - 1);
            let bias = if product < 0 { half - 1 } else { half };
            (product + bias) >> right
        };
        r.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

#[inline]
fn clamp_i8(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}

pub(crate) fn qparams(t: &Tensor) -> Result<QuantParams, TensorError> {
    t.quant().ok_or_else(|| TensorError::DType(alloc::format!("{} tensor has no quantization parameters", t.dtype())))
}

fn hwc(t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err!("expected [H, W, C], got {s:?}")),
    }
}

fn bias_i32(bias: Option<&Tensor>, n: usize) -> Result<Vec<i32>, TensorError> {
    match bias {
        Some(b) if b.len() == n => Ok(b.as_i32()?.to_vec()),
        Some(b) => Err(shape_err!("bias must be [{n}], got {:?}", b.shape())),
        None => Ok(vec![0; n]),
    }
}

/// 256-entry table mapping every input code through `f` in the real domain.
pub fn unary_lut(input: QuantParams, output: QuantParams, f: impl Fn(f32) -> f32) -> [i8; 256] {
    let mut lut = [0i8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        let q = i as i32 - 128;
        *slot = output.quantize(f(input.dequantize(q)));
    }
    lut
}

pub fn map_lut(x: &Tensor, out_qp: QuantParams, f: impl Fn(f32) -> f32) -> Result<Tensor, TensorError> {
    let lut = unary_lut(qparams(x)?, out_qp, f);
    let v = x.as_i8()?.iter().map(|&q| lut[(q as i32 + 128) as usize]).collect();
    Tensor::from_i8(x.shape().to_vec(), v, out_qp)
}

/// Re-expresses `x` under `out_qp` (identity when the parameters match).
pub fn requantize(x: &Tensor, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    if qparams(x)? == out_qp {
        return Ok(x.clone());
    }
    map_lut(x, out_qp, |v| v)
}

pub fn conv2d_q(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: Padding,
    out_qp: QuantParams,
) -> Result<Tensor, TensorError> {
    let (h, wd, cin) = hwc(x)?;
    let [kh, kw, wcin, cout] = *w.shape() else {
        return Err(shape_err!("conv weights must be [kh, kw, cin, cout], got {:?}", w.shape()));
    };
    if wcin != cin {
        return Err(shape_err!("conv input has {cin} channels, weights expect {wcin}"));
    }
    let (xq, wq) = (qparams(x)?, qparams(w)?);
    let g = Geometry::new((h, wd), (kh, kw), stride, padding)?;
    let rq = Requantizer::new(xq.scale as f64 * wq.scale as f64 / out_qp.scale as f64);
    let xs: Vec<i32> = x.as_i8()?.iter().map(|&v| v as i32 - xq.zero_point).collect();
    let ws: Vec<i32> = w.as_i8()?.iter().map(|&v| v as i32 - wq.zero_point).collect();
    let b = bias_i32(bias, cout)?;
    let mut out = vec![0i8; g.oh * g.ow * cout];
    let mut acc = vec![0i32; cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            acc.copy_from_slice(&b);
            for ky in 0..g.kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let px = &xs[(iy * wd + ix) * cin..][..cin];
                    let wbase = (ky * kw + kx) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        if xv == 0 {
                            continue;
                        }
                        let wrow = &ws[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
            let o = &mut out[(oy * g.ow + ox) * cout..][..cout];
            for (o, &a) in o.iter_mut().zip(&acc) {
                *o = clamp_i8(out_qp.zero_point as i64 + rq.apply(a as i64));
            }
        }
    }
    Tensor::from_i8(vec![g.oh, g.ow, cout], out, out_qp)
}

pub fn depthwise_conv2d_q(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: Padding,
    out_qp: QuantParams,
) -> Result<Tensor, TensorError> {
    let (h, wd, c) = hwc(x)?;
    let [kh, kw, wc] = *w.shape() else {
        return Err(shape_err!("depthwise weights must be [kh, kw, c], got {:?}", w.shape()));
    };
    if wc != c {
        return Err(shape_err!("depthwise input has {c} channels, weights expect {wc}"));
    }
    let (xq, wq) = (qparams(x)?, qparams(w)?);
    let g = Geometry::new((h, wd), (kh, kw), stride, padding)?;
    let rq = Requantizer::new(xq.scale as f64 * wq.scale as f64 / out_qp.scale as f64);
    let xs: Vec<i32> = x.as_i8()?.iter().map(|&v| v as i32 - xq.zero_point).collect();
    let ws: Vec<i32> = w.as_i8()?.iter().map(|&v| v as i32 - wq.zero_point).collect();
    let b = bias_i32(bias, c)?;
    let mut out = vec![0i8; g.oh * g.ow * c];
    let mut acc = vec![0i32; c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            acc.copy_from_slice(&b);
            for ky in 0..g.kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let px = &xs[(iy * wd + ix) * c..][..c];
                    let wrow = &ws[(ky * kw + kx) * c..][..c];
                    for ((a, &xv), &wv) in acc.iter_mut().zip(px).zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
            let o = &mut out[(oy * g.ow + ox) * c..][..c];
            for (o, &a) in o.iter_mut().zip(&acc) {
                *o = clamp_i8(out_qp.zero_point as i64 + rq.apply(a as i64));
            }
        }
    }
    Tensor::from_i8(vec![g.oh, g.ow, c], out, out_qp)
}

/// Integer `xW + b` over the last axis.
pub fn dense_q(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let [n, m] = *w.shape() else {
        return Err(shape_err!("dense weights must be [in, out], got {:?}", w.shape()));
    };
    if x.shape().last() != Some(&n) {
        return Err(shape_err!("dense expects last extent {n}, got {:?}", x.shape()));
    }
    let (xq, wq) = (qparams(x)?, qparams(w)?);
    let rq = Requantizer::new(xq.scale as f64 * wq.scale as f64 / out_qp.scale as f64);
    let xs: Vec<i32> = x.as_i8()?.iter().map(|&v| v as i32 - xq.zero_point).collect();
    let ws: Vec<i32> = w.as_i8()?.iter().map(|&v| v as i32 - wq.zero_point).collect();
    let b = bias_i32(bias, m)?;
    let rows = xs.len() / n;
    let mut out = vec![0i8; rows * m];
    let mut acc = vec![0i32; m];
    for r in 0..rows {
        acc.copy_from_slice(&b);
        for (i, &xv) in xs[r * n..(r + 1) * n].iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&ws[i * m..(i + 1) * m]) {
                *a += xv * wv;
            }
        }
        for (o, &a) in out[r * m..(r + 1) * m].iter_mut().zip(&acc) {
            *o = clamp_i8(out_qp.zero_point as i64 + rq.apply(a as i64));
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = m;
    Tensor::from_i8(shape, out, out_qp)
}

/// `scale · (A − za)(B − zb)ᵀ` requantized, for `A: [n, d]`, `B: [m, d]`.
pub fn matmul_transposed_q(a: &Tensor, b: &Tensor, scale: f64, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let (&[n, d], &[m, d2]) = (a.shape(), b.shape()) else {
        return Err(shape_err!("matmul expects rank-2 operands"));
    };
    if d != d2 {
        return Err(shape_err!("inner extents differ: {d} vs {d2}"));
    }
    let (aq, bq) = (qparams(a)?, qparams(b)?);
    let rq = Requantizer::new(aq.scale as f64 * bq.scale as f64 * scale / out_qp.scale as f64);
    let xa: Vec<i32> = a.as_i8()?.iter().map(|&v| v as i32 - aq.zero_point).collect();
    let xb: Vec<i32> = b.as_i8()?.iter().map(|&v| v as i32 - bq.zero_point).collect();
    let mut out = vec![0i8; n * m];
    for i in 0..n {
        for j in 0..m {
            let s: i32 = xa[i * d..(i + 1) * d].iter().zip(&xb[j * d..(j + 1) * d]).map(|(&p, &q)| p * q).sum();
            out[i * m + j] = clamp_i8(out_qp.zero_point as i64 + rq.apply(s as i64));
        }
    }
    Tensor::from_i8(vec![n, m], out, out_qp)
}

/// `(A − za)(B − zb)` requantized, for `A: [n, k]`, `B: [k, m]`.
pub fn matmul_q(a: &Tensor, b: &Tensor, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let (&[n, k], &[k2, m]) = (a.shape(), b.shape()) else {
        return Err(shape_err!("matmul expects rank-2 operands"));
    };
    if k != k2 {
        return Err(shape_err!("matmul shapes {:?} x {:?}", a.shape(), b.shape()));
    }
    let (aq, bq) = (qparams(a)?, qparams(b)?);
    let rq = Requantizer::new(aq.scale as f64 * bq.scale as f64 / out_qp.scale as f64);
    let xa: Vec<i32> = a.as_i8()?.iter().map(|&v| v as i32 - aq.zero_point).collect();
    let xb: Vec<i32> = b.as_i8()?.iter().map(|&v| v as i32 - bq.zero_point).collect();
    let mut out = vec![0i8; n * m];
    let mut acc = vec![0i32; m];
    for i in 0..n {
        acc.iter_mut().for_each(|a| *a = 0);
        for (t, &av) in xa[i * k..(i + 1) * k].iter().enumerate() {
            for (a, &bv) in acc.iter_mut().zip(&xb[t * m..(t + 1) * m]) {
                *a += av * bv;
            }
        }
        for (o, &a) in out[i * m..(i + 1) * m].iter_mut().zip(&acc) {
            *o = clamp_i8(out_qp.zero_point as i64 + rq.apply(a as i64));
        }
    }
    Tensor::from_i8(vec![n, m], out, out_qp)
}

pub fn pool2d_q(
    x: &Tensor,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
    out_qp: QuantParams,
) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc(x)?;
    let xq = qparams(x)?;
    let g = Geometry::new((h, w), window, stride, padding)?;
    let xs = x.as_i8()?;
    let max_count = window.0 * window.1;
    let rqs: Vec<Requantizer> =
        (0..=max_count).map(|n| Requantizer::new(xq.scale as f64 / (out_qp.scale as f64 * n.max(1) as f64))).collect();
    let pass = unary_lut(xq, out_qp, |v| v);
    let mut out = vec![0i8; g.oh * g.ow * c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for ch in 0..c {
                let mut best = i8::MIN;
                let mut sum = 0i32;
                let mut count = 0usize;
                for ky in 0..window.0 {
                    let Some(iy) = g.in_y(oy, ky) else { continue };
                    for kx in 0..window.1 {
                        let Some(ix) = g.in_x(ox, kx) else { continue };
                        let v = xs[(iy * w + ix) * c + ch];
                        best = best.max(v);
                        sum += v as i32 - xq.zero_point;
                        count += 1;
                    }
                }
                out[(oy * g.ow + ox) * c + ch] = match kind {
                    PoolKind::Max => pass[(best as i32 + 128) as usize],
                    PoolKind::Avg => clamp_i8(out_qp.zero_point as i64 + rqs[count].apply(sum as i64)),
                };
            }
        }
    }
    Tensor::from_i8(vec![g.oh, g.ow, c], out, out_qp)
}

pub fn global_avg_pool_q(x: &Tensor, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let c = *x.shape().last().ok_or_else(|| shape_err!("global pool on a scalar"))?;
    let xq = qparams(x)?;
    let xs = x.as_i8()?;
    let rows = xs.len() / c;
    let mut acc = vec![0i64; c];
    for r in 0..rows {
        for (a, &v) in acc.iter_mut().zip(&xs[r * c..(r + 1) * c]) {
            *a += v as i64 - xq.zero_point as i64;
        }
    }
    let rq = Requantizer::new(xq.scale as f64 / (out_qp.scale as f64 * rows as f64));
    let out = acc.into_iter().map(|a| clamp_i8(out_qp.zero_point as i64 + rq.apply(a))).collect();
    Tensor::from_i8(vec![c], out, out_qp)
}

/// Broadcast index of the suffix operand.
fn check_suffix(a: &Tensor, b: &Tensor) -> Result<usize, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(shape_err!("cannot broadcast {sb:?} onto {sa:?}"));
    }
    Ok(b.len())
}

const ADD_LEFT_SHIFT: u32 = 20;

/// `a ± b` with both operands rescaled to a shared fixed-point grid.
pub fn add_sub_q(a: &Tensor, b: &Tensor, subtract: bool, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let n = check_suffix(a, b)?;
    let (aq, bq) = (qparams(a)?, qparams(b)?);
    let twice_max = 2.0 * (aq.scale as f64).max(bq.scale as f64);
    let ra = Requantizer::new(aq.scale as f64 / twice_max);
    let rb = Requantizer::new(bq.scale as f64 / twice_max);
    let ro = Requantizer::new(twice_max / ((1u64 << ADD_LEFT_SHIFT) as f64 * out_qp.scale as f64));
    let (xa, xb) = (a.as_i8()?, b.as_i8()?);
    let out = xa
        .iter()
        .enumerate()
        .map(|(i, &va)| {
            let sa = ra.apply(((va as i64) - aq.zero_point as i64) << ADD_LEFT_SHIFT);
            let sb = rb.apply(((xb[i % n] as i64) - bq.zero_point as i64) << ADD_LEFT_SHIFT);
            let raw = if subtract { sa - sb } else { sa + sb };
            clamp_i8(out_qp.zero_point as i64 + ro.apply(raw))
        })
        .collect();
    Tensor::from_i8(a.shape().to_vec(), out, out_qp)
}

pub fn mul_q(a: &Tensor, b: &Tensor, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let n = check_suffix(a, b)?;
    let (aq, bq) = (qparams(a)?, qparams(b)?);
    let rq = Requantizer::new(aq.scale as f64 * bq.scale as f64 / out_qp.scale as f64);
    let (xa, xb) = (a.as_i8()?, b.as_i8()?);
    let out = xa
        .iter()
        .enumerate()
        .map(|(i, &va)| {
            let p = (va as i64 - aq.zero_point as i64) * (xb[i % n] as i64 - bq.zero_point as i64);
            clamp_i8(out_qp.zero_point as i64 + rq.apply(p))
        })
        .collect();
    Tensor::from_i8(a.shape().to_vec(), out, out_qp)
}

/// Concatenation along the last axis; each operand is mapped onto `out_qp`.
pub fn concat_q(inputs: &[&Tensor], out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let first = inputs.first().ok_or_else(|| shape_err!("concat of nothing"))?;
    let lead = &first.shape()[..first.rank() - 1];
    let mut parts = Vec::with_capacity(inputs.len());
    for t in inputs {
        if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
            return Err(shape_err!("concat operands disagree: {:?} vs {:?}", first.shape(), t.shape()));
        }
        parts.push(requantize(t, out_qp)?);
    }
    let widths: Vec<usize> = parts.iter().map(|t| *t.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows = num_elements(lead);
    let data: Vec<&[i8]> = parts.iter().map(|t| t.as_i8()).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (d, &w) in data.iter().zip(&widths) {
            out.extend_from_slice(&d[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_i8(shape, out, out_qp)
}

pub fn transpose_q(x: &Tensor, perm: &[usize], out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let shape = crate::tensor::permuted_shape(x.shape(), perm)?;
    let xs = x.as_i8()?;
    let moved = Tensor::from_i8(shape, permute_indices(x.shape(), perm).map(|i| xs[i]).collect(), qparams(x)?)?;
    requantize(&moved, out_qp)
}

pub fn slice_q(x: &Tensor, axis: usize, start: usize, len: usize, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let xs = x.as_i8()?;
    let data = slice_indices(x.shape(), axis, start, len)?.map(|i| xs[i]).collect();
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    requantize(&Tensor::from_i8(shape, data, qparams(x)?)?, out_qp)
}

pub fn reshape_q(x: &Tensor, shape: &[usize], out_qp: QuantParams) -> Result<Tensor, TensorError> {
    requantize(&x.reshape(shape.to_vec())?, out_qp)
}

/// Softmax over the last axis, evaluated in float between the INT8 codes.
pub fn softmax_q(x: &Tensor, out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let n = *x.shape().last().ok_or_else(|| shape_err!("softmax on a scalar"))?;
    let xq = qparams(x)?;
    let xs = x.as_i8()?;
    let mut row = vec![0f32; n];
    let mut probs = vec![0f32; n];
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks_exact(n) {
        row.iter_mut().zip(chunk).for_each(|(r, &q)| *r = xq.dequantize(q as i32));
        softmax_row(&row, &mut probs);
        out.extend(probs.iter().map(|&p| out_qp.quantize(p)));
    }
    Tensor::from_i8(x.shape().to_vec(), out, out_qp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d, dequantize_tensor, quantize_tensor, QuantParams};
    use proptest::prelude::*;

    #[test]
    fn requantizer_matches_real_multiplication() {
        for &real in &[0.5, 0.25, 1e-3, 0.7071, 3.0, 1.0 / 3.0] {
            let rq = Requantizer::new(real);
            for x in [-100_000i64, -7, -1, 0, 1, 5, 12345, 1 << 20] {
                let exact = x as f64 * real;
                assert!((rq.apply(x) as f64 - exact).abs() <= 0.5 + 1e-6 * exact.abs(), "{real} * {x}");
            }
        }
        assert_eq!(Requantizer::new(0.5).apply(3), 2);
        assert_eq!(Requantizer::new(0.5).apply(-3), -2);
    }

    proptest! {
        #[test]
        fn requantizer_rounds_to_nearest(real in 1e-6f64..100.0, x in -1_000_000i64..1_000_000) {
            let got = Requantizer::new(real).apply(x) as f64;
            let exact = x as f64 * real;
            prop_assert!((got - exact).abs() <= 0.5 + 1e-8 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn relu6_lut_is_exact_on_grid() {
        let qp = QuantParams::from_range(-6.0, 6.0);
        let out = QuantParams::from_range(0.0, 6.0);
        let lut = unary_lut(qp, out, |v| v.clamp(0.0, 6.0));
        for q in -128..=127 {
            let want = out.quantize(qp.dequantize(q).clamp(0.0, 6.0));
            assert_eq!(lut[(q + 128) as usize], want);
        }
    }

    #[test]
    fn int_conv_tracks_float_conv() {
        let xs: Vec<f32> = (0..5 * 4 * 3).map(|i| ((i * 37 % 23) as f32 - 11.0) / 7.0).collect();
        let ws: Vec<f32> = (0..3 * 3 * 3 * 2).map(|i| ((i * 13 % 17) as f32 - 8.0) / 16.0).collect();
        let x = Tensor::from_f32(vec![5, 4, 3], xs).unwrap();
        let w = Tensor::from_f32(vec![3, 3, 3, 2], ws).unwrap();
        let reference = conv2d(&x, &w, None, (1, 1), Padding::Same).unwrap();
        let r = reference.as_f32().unwrap();
        let (lo, hi) = r.iter().fold((0f32, 0f32), |(a, b), &v| (a.min(v), b.max(v)));
        let out_qp = QuantParams::from_range(lo, hi);
        let xq = quantize_tensor(&x, QuantParams::from_range(-11.0 / 7.0, 11.0 / 7.0)).unwrap();
        let wq = quantize_tensor(&w, QuantParams::symmetric(0.5)).unwrap();
        let y = dequantize_tensor(&conv2d_q(&xq, &wq, None, (1, 1), Padding::Same, out_qp).unwrap()).unwrap();
        for (a, b) in y.as_f32().unwrap().iter().zip(r) {
            assert!((a - b).abs() <= 4.0 * out_qp.scale, "{a} vs {b}");
        }
    }

    #[test]
    fn add_and_mul_track_float() {
        let a = Tensor::from_f32(vec![2, 3], vec![-1.0, 0.5, 2.0, 3.0, -2.5, 0.0]).unwrap();
        let b = Tensor::from_f32(vec![3], vec![0.25, -1.0, 1.5]).unwrap();
        let (aq, bq) = (QuantParams::from_range(-2.5, 3.0), QuantParams::from_range(-1.0, 1.5));
        let (qa, qb) = (quantize_tensor(&a, aq).unwrap(), quantize_tensor(&b, bq).unwrap());
        let sum_qp = QuantParams::from_range(-4.0, 4.5);
        let s = dequantize_tensor(&add_sub_q(&qa, &qb, false, sum_qp).unwrap()).unwrap();
        let want = crate::tensor::add(&a, &b).unwrap();
        for (x, y) in s.as_f32().unwrap().iter().zip(want.as_f32().unwrap()) {
            assert!((x - y).abs() <= 2.0 * sum_qp.scale, "{x} vs {y}");
        }
        let prod_qp = QuantParams::from_range(-4.0, 4.0);
        let p = dequantize_tensor(&mul_q(&qa, &qb, prod_qp).unwrap()).unwrap();
        let want = crate::tensor::mul(&a, &b).unwrap();
        for (x, y) in p.as_f32().unwrap().iter().zip(want.as_f32().unwrap()) {
            assert!((x - y).abs() <= 2.0 * prod_qp.scale, "{x} vs {y}");
        }
    }

    #[test]
    fn max_pool_is_exact_when_parameters_pass_through() {
        let qp = QuantParams::from_range(-1.0, 1.0);
        let x = Tensor::from_i8(vec![2, 2, 1], vec![-5, 9, 3, 2], qp).unwrap();
        let y = pool2d_q(&x, PoolKind::Max, (2, 2), (2, 2), Padding::Valid, qp).unwrap();
        assert_eq!(y.as_i8().unwrap(), &[9]);
    }
}
