use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, KWS_PREFIX};
use crate::graph::{eval_node_float, GraphError, ModelGraph, Op};
use crate::tensor::Tensor;

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-tensor generator. The keyword-branch prefix is ignored so a weight
/// gets the same values in both models.
fn tensor_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let key = name.strip_prefix(KWS_PREFIX).unwrap_or(name);
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random weights for every parameter: He-uniform kernels, Xavier attention
/// projections, small biases and plausible normalisation statistics.
pub fn init_weights(graph: &mut ModelGraph, seed: u64) -> Result<(), ModelError> {
    for node in &graph.nodes {
        for (idx, name) in node.params.iter().enumerate() {
            let t = graph.weights.get_mut(name).ok_or_else(|| GraphError::MissingWeight(name.clone()))?;
            let shape = t.shape().to_vec();
            let n = t.len();
            let mut rng = tensor_rng(seed, name);
            let values = match (&node.op, idx) {
                (Op::Conv2d { .. }, 0) => {
                    let limit = libm::sqrtf(6.0 / (shape[0] * shape[1] * shape[2]) as f32);
                    uniform(&mut rng, n, -limit, limit)
                }
                (Op::DepthwiseConv2d { .. }, 0) => {
                    let limit = libm::sqrtf(6.0 / (shape[0] * shape[1]) as f32);
                    uniform(&mut rng, n, -limit, limit)
                }
                (Op::Dense { .. }, 0) => {
                    let limit = libm::sqrtf(6.0 / shape[0] as f32);
                    uniform(&mut rng, n, -limit, limit)
                }
                (Op::Attention, i) if i % 2 == 0 => {
                    let limit = libm::sqrtf(6.0 / (shape[0] + shape[1]) as f32);
                    uniform(&mut rng, n, -limit, limit)
                }
                (Op::BatchNorm { .. } | Op::SubSpectralNorm { .. }, 0 | 3) => uniform(&mut rng, n, 0.5, 1.5),
                (Op::LayerNorm { .. }, 0) => uniform(&mut rng, n, 0.8, 1.2),
                _ => uniform(&mut rng, n, -0.1, 0.1),
            };
            *t = Tensor::from_f32(shape, values)?;
        }
    }
    Ok(())
}

/// Copies every weight of `src` into `dst` under `prefix`, skipping names
/// `dst` does not have. Returns the number of tensors copied.
pub fn import_weights(dst: &mut ModelGraph, src: &ModelGraph, prefix: &str) -> Result<usize, ModelError> {
    let mut copied = 0;
    for (name, t) in &src.weights {
        let target = format!("{prefix}{name}");
        if let Some(slot) = dst.weights.get_mut(&target) {
            if slot.shape() != t.shape() {
                return Err(ModelError::Config(format!(
                    "`{target}` is {:?} here but {:?} in the source",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t.clone();
            copied += 1;
        }
    }
    Ok(copied)
}

/// Batch-norm variances are floored at this fraction of the layer median so
/// near-constant channels are not amplified.
const VAR_FLOOR: f64 = 0.1;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s.get(s.len() / 2).copied().unwrap_or(0.0)
}

/// Per-channel mean and variance over the last axis.
fn channel_moments<'a>(tensors: impl Iterator<Item = &'a Tensor>, c: usize) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let (mut sum, mut sq, mut count) = (vec![0f64; c], vec![0f64; c], 0usize);
    for t in tensors {
        for row in t.as_f32()?.chunks_exact(c) {
            for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(row) {
                *s += v as f64;
                *q += v as f64 * v as f64;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0)).collect();
    Ok((mean, var))
}

fn set_weight(graph: &mut ModelGraph, name: &str, values: Vec<f32>) -> Result<(), ModelError> {
    let t = graph.weights.get_mut(name).ok_or_else(|| GraphError::MissingWeight(name.into()))?;
    *t = Tensor::from_f32(t.shape().to_vec(), values)?;
    Ok(())
}

/// Data-dependent statistics for a randomly initialised graph, fitted layer
/// by layer on `samples` (one input list per sample):
///
/// * batch norms take the observed per-channel mean and variance of their
///   input, as after training;
/// * conv and dense layers that feed no batch norm get one gain so their
///   output has unit mean square; the logits layer also has its bias
///   centred per class so no class dominates a priori.
///
/// Nodes whose name starts with `frozen_prefix` keep their weights.
pub fn fit_statistics(graph: &mut ModelGraph, samples: &[Vec<crate::tensor::Tensor>], frozen_prefix: Option<&str>) -> Result<(), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Config("statistics fitting needs at least one sample".into()));
    }
    let mut last_use = vec![0usize; graph.values.len()];
    for (i, n) in graph.nodes.iter().enumerate() {
        n.inputs.iter().for_each(|&v| last_use[v] = i);
    }
    let mut slots: Vec<Option<Vec<Tensor>>> = vec![None; graph.values.len()];
    for (k, &id) in graph.inputs.iter().enumerate() {
        slots[id] = Some(samples.iter().map(|s| s[k].clone()).collect());
    }
    for i in 0..graph.nodes.len() {
        let node = graph.nodes[i].clone();
        let frozen = frozen_prefix.is_some_and(|p| node.name.starts_with(p));
        let args: Vec<&Vec<Tensor>> = node
            .inputs
            .iter()
            .map(|&v| slots[v].as_ref().ok_or_else(|| GraphError::Malformed(format!("value {v} not available"))))
            .collect::<Result<_, _>>()?;
        let eval = |graph: &ModelGraph| -> Result<Vec<Tensor>, ModelError> {
            (0..samples.len())
                .map(|s| {
                    let a: Vec<&Tensor> = args.iter().map(|v| &v[s]).collect();
                    Ok(eval_node_float(graph, &node, &a)?)
                })
                .collect()
        };
        let mut out = eval(graph)?;
        if !frozen {
            match node.op {
                Op::BatchNorm { .. } => {
                    let c = *graph.values[node.output].shape.last().unwrap();
                    let (mean, var) = channel_moments(args[0].iter(), c)?;
                    let floor = VAR_FLOOR * median(&var);
                    set_weight(graph, &node.params[2], mean.iter().map(|&m| m as f32).collect())?;
                    set_weight(graph, &node.params[3], var.iter().map(|&v| v.max(floor) as f32).collect())?;
                    out = eval(graph)?;
                }
                Op::Conv2d { .. } | Op::DepthwiseConv2d { .. } | Op::Dense { .. } => {
                    let feeds_bn = graph
                        .consumers(node.output)
                        .iter()
                        .any(|&c| matches!(graph.nodes[c].op, Op::BatchNorm { .. }));
                    if !feeds_bn {
                        let c = *graph.values[node.output].shape.last().unwrap();
                        let (mean, var) = channel_moments(out.iter(), c)?;
                        let ms = mean.iter().zip(&var).map(|(m, v)| m * m + v).sum::<f64>() / c as f64;
                        if ms > 1e-24 {
                            let gain = 1.0 / libm::sqrt(ms);
                            let is_logits = graph.logits == Some(node.output);
                            for (k, p) in node.params.iter().enumerate() {
                                let centre = |j: usize| if k == 1 && is_logits { mean[j] } else { 0.0 };
                                let scaled = graph
                                    .weight(p)?
                                    .as_f32()?
                                    .iter()
                                    .enumerate()
                                    .map(|(j, &x)| ((x as f64 - centre(j)) * gain) as f32)
                                    .collect();
                                set_weight(graph, p, scaled)?;
                            }
                            out = eval(graph)?;
                        }
                    }
                }
                _ => {}
            }
        }
        drop(args);
        slots[node.output] = Some(out);
        for &v in &node.inputs {
            if last_use[v] == i && !graph.outputs.contains(&v) {
                slots[v] = None;
            }
        }
    }
    Ok(())
}
