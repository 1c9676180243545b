use emoedge_core::compiler::{compile, partition, rewrite, validate, NodeVerdict, OpSupportPolicy, Reason, Target};
use emoedge_core::graph::{run_float, GraphBuilder, LayerKind, ModelKind, Op};
use emoedge_core::quant::{self, run_quantized};
use emoedge_core::{ModelGraph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn float_policy() -> OpSupportPolicy {
    OpSupportPolicy { require_int8: false, ..OpSupportPolicy::default() }
}

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_f32(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

/// `x → relu6 → (x − relu6(x))² → row-wise dense`.
fn rewritable(rng: &mut ChaCha8Rng) -> ModelGraph {
    let mut b = GraphBuilder::new(ModelKind::Custom);
    let x = b.input("x", vec![6, 8]);
    let y = b.node("act", "g", Op::Relu6, &[x], vec![]).unwrap();
    let z = b.node("sq", "g", Op::SquaredDifference, &[x, y], vec![]).unwrap();
    let w = random(vec![8, 5], rng);
    let bias = random(vec![5], rng);
    let o = b.node("proj", "g", Op::Dense { bias: true }, &[z], vec![("proj/w".into(), w), ("proj/b".into(), bias)]).unwrap();
    b.output(o);
    b.set_logits(o);
    b.finish().unwrap()
}

#[test]
fn rewrites_preserve_float_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = rewritable(&mut rng);
    let out = rewrite(&g, &float_policy()).unwrap();
    let rules: Vec<&str> = out.log.iter().map(|r| r.rule.as_str()).collect();
    assert_eq!(rules, ["squared_difference_to_sub_mul", "dense_rows_to_conv1x1"]);
    assert!(out.unresolved.is_empty());
    for _ in 0..100 {
        let x = random(vec![6, 8], &mut rng);
        let a = run_float(&g, std::slice::from_ref(&x)).unwrap();
        let b = run_float(&out.graph, &[x]).unwrap();
        for (p, q) in a[0].as_f32().unwrap().iter().zip(b[0].as_f32().unwrap()) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0), "{p} vs {q}");
        }
    }
}

#[test]
fn dense_rewrite_is_exact_in_int8() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut b = GraphBuilder::new(ModelKind::Custom);
    let x = b.input("x", vec![6, 8]);
    let o = b
        .node("proj", "g", Op::Dense { bias: true }, &[x], vec![("proj/w".into(), random(vec![8, 5], &mut rng)), ("proj/b".into(), random(vec![5], &mut rng))])
        .unwrap();
    b.output(o);
    let g = b.finish().unwrap();
    let cal: Vec<Vec<Tensor>> = (0..16).map(|_| vec![random(vec![6, 8], &mut rng)]).collect();
    let q = quant::quantize_graph(&g, &quant::calibrate(&g, &cal).unwrap()).unwrap();
    let out = rewrite(&q, &OpSupportPolicy::default()).unwrap();
    assert_eq!(out.log.len(), 1);
    for _ in 0..100 {
        let x = random(vec![6, 8], &mut rng);
        assert_eq!(run_quantized(&q, std::slice::from_ref(&x)).unwrap(), run_quantized(&out.graph, &[x]).unwrap());
    }
}

#[test]
fn squared_difference_rewrite_in_int8_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut b = GraphBuilder::new(ModelKind::Custom);
    let x = b.input("x", vec![6, 8]);
    let y = b.node("act", "g", Op::Sigmoid, &[x], vec![]).unwrap();
    let z = b.node("sq", "g", Op::SquaredDifference, &[x, y], vec![]).unwrap();
    b.output(z);
    let g = b.finish().unwrap();
    let cal: Vec<Vec<Tensor>> = (0..16).map(|_| vec![random(vec![6, 8], &mut rng)]).collect();
    let q = quant::quantize_graph(&g, &quant::calibrate(&g, &cal).unwrap()).unwrap();
    let out = rewrite(&q, &OpSupportPolicy::default()).unwrap();
    assert_eq!(out.log.len(), 1);
    // the int8 difference carries up to half a step of error into the square
    let qp = |name: &str| out.graph.values[out.graph.value_by_name(name).unwrap()].quant.unwrap();
    let (sd, so) = (qp("sq/sub").scale as f64, qp("sq").scale as f64);
    let (lo, hi) = qp("sq/sub").real_range();
    let dmax = (lo as f64).abs().max(hi as f64);
    let bound = ((dmax * sd + sd * sd / 4.0) / so).ceil() as i32 + 1;
    for _ in 0..100 {
        let x = random(vec![6, 8], &mut rng);
        let a = run_quantized(&q, std::slice::from_ref(&x)).unwrap();
        let b = run_quantized(&out.graph, &[x]).unwrap();
        let (a, b) = (a[0].as_i8().unwrap(), b[0].as_i8().unwrap());
        assert!(a.iter().zip(b).all(|(p, q)| (*p as i32 - *q as i32).abs() <= bound));
    }
}

fn chain(len: usize) -> ModelGraph {
    let mut b = GraphBuilder::new(ModelKind::Custom);
    let mut x = b.input("x", vec![4, 4, 2]);
    for i in 0..len {
        x = b.node(&format!("n{i}"), "g", Op::Relu6, &[x], vec![]).unwrap();
    }
    b.output(x);
    b.finish().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_covers_in_order(flags in prop::collection::vec(any::<bool>(), 1..30)) {
        let g = chain(flags.len());
        let verdicts: Vec<NodeVerdict> = flags
            .iter()
            .enumerate()
            .map(|(i, &bad)| NodeVerdict {
                node: format!("n{i}"),
                kind: LayerKind::Relu6,
                reasons: if bad { vec![Reason::UnknownOp] } else { vec![] },
                detail: String::new(),
            })
            .collect();
        let plan = partition(&g, &verdicts);
        let flat: Vec<String> = plan.segments.iter().flat_map(|s| s.nodes.clone()).collect();
        let names: Vec<String> = (0..flags.len()).map(|i| format!("n{i}")).collect();
        prop_assert_eq!(flat, names);
        for w in plan.segments.windows(2) {
            prop_assert_ne!(w[0].target, w[1].target);
        }
        for s in &plan.segments {
            for n in &s.nodes {
                let i: usize = n[1..].parse().unwrap();
                prop_assert_eq!(s.target == Target::Fallback, flags[i]);
            }
        }
        prop_assert_eq!(plan.fallback_nodes(), flags.iter().filter(|&&b| b).count());
    }

    #[test]
    fn rewriting_never_adds_unsupported_nodes(ops in prop::collection::vec(0u8..4, 1..12), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new(ModelKind::Custom);
        let mut x = b.input("x", vec![3, 2, 4]);
        for (i, op) in ops.iter().enumerate() {
            let name = format!("n{i}");
            x = match op {
                0 => b.node(&name, "g", Op::Relu6, &[x], vec![]).unwrap(),
                1 => {
                    let y = b.node(&format!("{name}a"), "g", Op::Sigmoid, &[x], vec![]).unwrap();
                    b.node(&name, "g", Op::SquaredDifference, &[x, y], vec![]).unwrap()
                }
                2 => b.node(&name, "g", Op::Dense { bias: false }, &[x], vec![(format!("{name}/w"), random(vec![4, 4], &mut rng))]).unwrap(),
                _ => b.node(&name, "g", Op::SubSpectralNorm { sub_bands: 1, eps: 1e-5 }, &[x], vec![
                    (format!("{name}/g"), random(vec![4], &mut rng)),
                    (format!("{name}/b"), random(vec![4], &mut rng)),
                    (format!("{name}/m"), random(vec![4], &mut rng)),
                    (format!("{name}/v"), Tensor::from_f32(vec![4], vec![1.0; 4]).unwrap()),
                ]).unwrap(),
            };
        }
        b.output(x);
        let g = b.finish().unwrap();
        let policy = float_policy();
        let unsupported = |g: &ModelGraph| validate(g, &policy).unwrap().iter().filter(|v| !v.supported()).count();
        let out = rewrite(&g, &policy).unwrap();
        prop_assert!(unsupported(&out.graph) <= unsupported(&g));
        prop_assert_eq!(unsupported(&out.graph), ops.iter().filter(|&&o| o == 3).count());
    }
}

#[test]
fn compile_is_deterministic() {
    let (_, emo) = emoedge_core::models::initialized_models(4).unwrap();
    let (ga, a) = compile(&emo, &OpSupportPolicy::default()).unwrap();
    let (gb, b) = compile(&emo, &OpSupportPolicy::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(ga, gb);
    // a float model is rejected as a whole, not node by node
    assert!(!a.fully_accelerated);
}

#[test]
fn rank_four_activations_are_rejected() {
    let mut b = GraphBuilder::new(ModelKind::Custom);
    let x = b.input("x", vec![2, 3, 4, 5]);
    let y = b.node("act", "g", Op::Relu6, &[x], vec![]).unwrap();
    b.output(y);
    let g = b.finish().unwrap();
    let v = validate(&g, &float_policy()).unwrap();
    assert_eq!(v[0].reasons, [Reason::RankViolation]);
    let (_, report) = compile(&g, &float_policy()).unwrap();
    assert!(!report.fully_accelerated);
    assert_eq!(report.fallback_nodes, 1);

    let mut b = GraphBuilder::new(ModelKind::Custom);
    let x = b.input("x", vec![1, 1, 4, 5]);
    let y = b.node("act", "g", Op::Relu6, &[x], vec![]).unwrap();
    b.output(y);
    assert!(validate(&b.finish().unwrap(), &float_policy()).unwrap()[0].supported());
}
