use emoedge_core::graph::{eval_op_float, infer_shape, Op};
use emoedge_core::tensor::{self, AttentionWeights, BatchNormParams, Padding, PoolKind, SeWeights, Tensor};
use proptest::prelude::*;

fn t(shape: Vec<usize>, v: Vec<f32>) -> Tensor {
    Tensor::from_f32(shape, v).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, n)
}

fn close(a: &[f32], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| (x as f64 - y).abs() <= 1e-6 * y.abs().max(1.0) + 1e-6)
}

/// Leading pad along one axis, TensorFlow convention.
fn pad_before(input: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, (input - k) / s + 1),
        Padding::Same => {
            let out = input.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(input);
            (total / 2, out)
        }
    }
}

fn naive_conv(x: &[f32], (h, w, cin): (usize, usize, usize), k: &[f32], (kh, kw, cout): (usize, usize, usize), stride: (usize, usize), padding: Padding, depthwise: bool) -> (Vec<usize>, Vec<f64>) {
    let (py, oh) = pad_before(h, kh, stride.0, padding);
    let (px, ow) = pad_before(w, kw, stride.1, padding);
    let co = if depthwise { cin } else { cout };
    let mut out = vec![0f64; oh * ow * co];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..co {
                let mut acc = 0f64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride.0 + ky) as isize - py as isize;
                        let ix = (ox * stride.1 + kx) as isize - px as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let base = (iy as usize * w + ix as usize) * cin;
                        if depthwise {
                            acc += x[base + o] as f64 * k[(ky * kw + kx) * cin + o] as f64;
                        } else {
                            for i in 0..cin {
                                acc += x[base + i] as f64 * k[((ky * kw + kx) * cin + i) * cout + o] as f64;
                            }
                        }
                    }
                }
                out[(oy * ow + ox) * co + o] = acc;
            }
        }
    }
    (vec![oh, ow, co], out)
}

fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, usize, bool)> {
    (3usize..7, 3usize..7, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..3, 1usize..3, any::<bool>())
        .prop_filter("kernel fits", |&(h, w, _, kh, kw, _, _, _, _)| kh <= h && kw <= w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_loops((h, w, cin, kh, kw, cout, sy, sx, same) in conv_case(), seed in any::<u64>()) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let mut r = rand_like(seed);
        let x: Vec<f32> = (0..h * w * cin).map(|_| r()).collect();
        let k: Vec<f32> = (0..kh * kw * cin * cout).map(|_| r()).collect();
        let got = tensor::conv2d(&t(vec![h, w, cin], x.clone()), &t(vec![kh, kw, cin, cout], k.clone()), None, (sy, sx), padding).unwrap();
        let (shape, want) = naive_conv(&x, (h, w, cin), &k, (kh, kw, cout), (sy, sx), padding, false);
        prop_assert_eq!(got.shape(), shape.as_slice());
        prop_assert!(close(got.as_f32().unwrap(), &want));

        let kd: Vec<f32> = (0..kh * kw * cin).map(|_| r()).collect();
        let got = tensor::depthwise_conv2d(&t(vec![h, w, cin], x.clone()), &t(vec![kh, kw, cin], kd.clone()), None, (sy, sx), padding).unwrap();
        let (shape, want) = naive_conv(&x, (h, w, cin), &kd, (kh, kw, cin), (sy, sx), padding, true);
        prop_assert_eq!(got.shape(), shape.as_slice());
        prop_assert!(close(got.as_f32().unwrap(), &want));
    }

    #[test]
    fn dense_matches_loops(rows in 1usize..4, n in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut r = rand_like(seed);
        let x: Vec<f32> = (0..rows * n).map(|_| r()).collect();
        let w: Vec<f32> = (0..n * m).map(|_| r()).collect();
        let b: Vec<f32> = (0..m).map(|_| r()).collect();
        let got = tensor::dense(&t(vec![rows, n], x.clone()), &t(vec![n, m], w.clone()), Some(&t(vec![m], b.clone()))).unwrap();
        let want: Vec<f64> = (0..rows * m)
            .map(|i| {
                let (row, o) = (i / m, i % m);
                b[o] as f64 + (0..n).map(|j| x[row * n + j] as f64 * w[j * m + o] as f64).sum::<f64>()
            })
            .collect();
        prop_assert!(close(got.as_f32().unwrap(), &want));
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(v in values(7), shift in -50.0f32..50.0) {
        let p = tensor::softmax(&t(vec![7], v.clone())).unwrap();
        let s: f64 = p.as_f32().unwrap().iter().map(|&x| x as f64).sum();
        prop_assert!((s - 1.0).abs() <= 1e-6);
        let q = tensor::softmax(&t(vec![7], v.iter().map(|x| x + shift).collect())).unwrap();
        for (a, b) in p.as_f32().unwrap().iter().zip(q.as_f32().unwrap()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn relu6_is_idempotent(v in prop::collection::vec(-20.0f32..20.0, 1..40)) {
        let n = v.len();
        let once = tensor::relu6(&t(vec![n], v)).unwrap();
        prop_assert_eq!(tensor::relu6(&once).unwrap(), once.clone());
        prop_assert!(once.as_f32().unwrap().iter().all(|&x| (0.0..=6.0).contains(&x)));
    }

    #[test]
    fn se_gates_are_open_interval(x in values(2 * 2 * 8), w1 in values(8 * 2), w2 in values(2 * 8), b1 in values(2), b2 in values(8)) {
        let g = tensor::se_gates(
            &t(vec![2, 2, 8], x),
            SeWeights { squeeze_w: &t(vec![8, 2], w1), squeeze_b: &t(vec![2], b1), excite_w: &t(vec![2, 8], w2), excite_b: &t(vec![8], b2) },
        )
        .unwrap();
        prop_assert!(g.as_f32().unwrap().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn inferred_shapes_match_execution(h in 2usize..9, w in 2usize..9, c in 1usize..5, seed in any::<u64>()) {
        let mut r = rand_like(seed);
        let x = t(vec![h, w, c], (0..h * w * c).map(|_| r()).collect());
        let cases: Vec<(Op, Vec<Tensor>)> = vec![
            (Op::Conv2d { kernel: (2, 1), stride: (2, 1), padding: Padding::Same, bias: false }, vec![t(vec![2, 1, c, 3], vec![0.5; 2 * c * 3])]),
            (Op::DepthwiseConv2d { kernel: (3, 3), stride: (1, 1), padding: Padding::Same, bias: false }, vec![t(vec![3, 3, c], vec![0.1; 9 * c])]),
            (Op::MaxPool2d { window: (2, 2), stride: (2, 2), padding: Padding::Valid }, vec![]),
            (Op::AvgPool2d { window: (2, 2), stride: (1, 1), padding: Padding::Same }, vec![]),
            (Op::GlobalAvgPool, vec![]),
            (Op::Relu6, vec![]),
            (Op::Sigmoid, vec![]),
            (Op::Softmax, vec![]),
            (Op::Dense { bias: false }, vec![t(vec![c, 4], vec![0.2; c * 4])]),
            (Op::Transpose { perm: vec![1, 0, 2] }, vec![]),
            (Op::Reshape { shape: vec![h * w, c] }, vec![]),
            (Op::Slice { axis: 1, start: 1, len: w - 1 }, vec![]),
        ];
        for (op, params) in cases {
            let p_shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
            let inferred = infer_shape(&op, &[x.shape()], &p_shapes).unwrap();
            let refs: Vec<&Tensor> = params.iter().collect();
            let (out, _) = eval_op_float(&op, &[&x], &refs).unwrap();
            prop_assert_eq!(inferred.as_slice(), out.shape(), "{:?}", op);
        }
    }
}

fn naive_pool(x: &[f32], (h, w, c): (usize, usize, usize), win: (usize, usize), stride: (usize, usize), padding: Padding, max: bool) -> Vec<f64> {
    let (py, oh) = pad_before(h, win.0, stride.0, padding);
    let (px, ow) = pad_before(w, win.1, stride.1, padding);
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut cells = Vec::new();
                for ky in 0..win.0 {
                    for kx in 0..win.1 {
                        let iy = (oy * stride.0 + ky) as isize - py as isize;
                        let ix = (ox * stride.1 + kx) as isize - px as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            cells.push(x[(iy as usize * w + ix as usize) * c + ch] as f64);
                        }
                    }
                }
                out.push(if max { cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max) } else { cells.iter().sum::<f64>() / cells.len() as f64 });
            }
        }
    }
    out
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    (0..n * m).map(|i| (0..k).map(|j| a[i / m * k + j] * b[j * m + i % m]).sum()).collect()
}

fn affine(x: &[f64], w: &[f32], b: &[f32], n: usize, d: usize) -> Vec<f64> {
    let w: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let mut y = matmul(x, &w, n, d, d);
    y.iter_mut().enumerate().for_each(|(i, v)| *v += b[i % d] as f64);
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pools_match_loops(h in 2usize..7, w in 2usize..7, c in 1usize..4, wy in 1usize..3, wx in 1usize..3, sy in 1usize..3, sx in 1usize..3, same: bool, seed in any::<u64>()) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let mut r = rand_like(seed);
        let x: Vec<f32> = (0..h * w * c).map(|_| r()).collect();
        for (kind, max) in [(PoolKind::Max, true), (PoolKind::Avg, false)] {
            let got = tensor::pool2d(&t(vec![h, w, c], x.clone()), kind, (wy, wx), (sy, sx), padding).unwrap();
            prop_assert!(close(got.as_f32().unwrap(), &naive_pool(&x, (h, w, c), (wy, wx), (sy, sx), padding, max)));
        }
        let g = tensor::global_avg_pool(&t(vec![h, w, c], x.clone())).unwrap();
        let want: Vec<f64> = (0..c).map(|ch| (0..h * w).map(|i| x[i * c + ch] as f64).sum::<f64>() / (h * w) as f64).collect();
        prop_assert!(close(g.as_f32().unwrap(), &want));
    }

    #[test]
    fn normalisations_match_formulas(n in 1usize..5, d in 2usize..9, seed in any::<u64>()) {
        let mut r = rand_like(seed);
        let x: Vec<f32> = (0..n * d).map(|_| r() * 3.0).collect();
        let g: Vec<f32> = (0..d).map(|_| r()).collect();
        let b: Vec<f32> = (0..d).map(|_| r()).collect();
        let got = tensor::layer_norm(&t(vec![n, d], x.clone()), &t(vec![d], g.clone()), &t(vec![d], b.clone()), 1e-5).unwrap();
        let mut want = Vec::new();
        for row in x.chunks(d) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            want.extend(row.iter().enumerate().map(|(i, &v)| (v as f64 - mean) / (var + 1e-5).sqrt() * g[i] as f64 + b[i] as f64));
        }
        prop_assert!(close(got.as_f32().unwrap(), &want));

        let mean: Vec<f32> = (0..d).map(|_| r()).collect();
        let var: Vec<f32> = (0..d).map(|_| r().abs() + 0.1).collect();
        let bn = BatchNormParams { gamma: &t(vec![d], g.clone()), beta: &t(vec![d], b.clone()), mean: &t(vec![d], mean.clone()), var: &t(vec![d], var.clone()), eps: 1e-3 };
        let got = tensor::batch_norm(&t(vec![n, d], x.clone()), bn).unwrap();
        let want: Vec<f64> = x.iter().enumerate().map(|(i, &v)| {
            let c = i % d;
            (v as f64 - mean[c] as f64) / (var[c] as f64 + 1e-3).sqrt() * g[c] as f64 + b[c] as f64
        }).collect();
        prop_assert!(close(got.as_f32().unwrap(), &want));
    }

    #[test]
    fn attention_matches_loops(n in 1usize..6, d in 1usize..6, seed in any::<u64>()) {
        let mut r = rand_like(seed);
        let mut v = |len: usize| (0..len).map(|_| r()).collect::<Vec<f32>>();
        let x = v(n * d);
        let ws: Vec<Vec<f32>> = (0..4).map(|_| v(d * d)).collect();
        let bs: Vec<Vec<f32>> = (0..4).map(|_| v(d)).collect();
        let wt: Vec<Tensor> = ws.iter().map(|w| t(vec![d, d], w.clone())).collect();
        let bt: Vec<Tensor> = bs.iter().map(|b| t(vec![d], b.clone())).collect();
        let got = tensor::single_head_attention(
            &t(vec![n, d], x.clone()),
            AttentionWeights { wq: &wt[0], bq: &bt[0], wk: &wt[1], bk: &bt[1], wv: &wt[2], bv: &bt[2], wo: &wt[3], bo: &bt[3] },
        )
        .unwrap();

        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let (q, k, val) = (affine(&xf, &ws[0], &bs[0], n, d), affine(&xf, &ws[1], &bs[1], n, d), affine(&xf, &ws[2], &bs[2], n, d));
        let mut ctx = vec![0f64; n * d];
        for i in 0..n {
            let scores: Vec<f64> = (0..n).map(|j| (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (d as f64).sqrt()).collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for c in 0..d {
                    ctx[i * d + c] += e[j] / z * val[j * d + c];
                }
            }
        }
        prop_assert!(close(got.as_f32().unwrap(), &affine(&ctx, &ws[3], &bs[3], n, d)));
    }

    #[test]
    fn positions_are_sinusoids(n in 1usize..40, half in 1usize..10) {
        let d = 2 * half;
        let pe = tensor::sinusoidal_positions(n, d).unwrap();
        let want: Vec<f64> = (0..n * d).map(|i| {
            let (pos, c) = ((i / d) as f64, i % d);
            let angle = pos / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
            if c % 2 == 0 { angle.sin() } else { angle.cos() }
        }).collect();
        prop_assert!(close(pe.as_f32().unwrap(), &want));
    }
}

/// Small deterministic generator in [-1, 1).
fn rand_like(seed: u64) -> impl FnMut() -> f32 {
    let mut s = seed | 1;
    move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    }
}
