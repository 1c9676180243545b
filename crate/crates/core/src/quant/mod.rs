//! Post-training INT8 quantization: batch-norm folding, min/max
//! calibration, graph conversion and the integer executor.

mod kernels;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{eval_op_float, run_float_observed, GraphError, ModelGraph, Node, Op, ValueId};
use crate::tensor::{
    dequantize_tensor, fold_batchnorm, quantize_tensor, quantize_tensor_i32, BatchNormParams, DType, PoolKind,
    QuantParams, Tensor, TensorError,
};

pub use kernels::{
    add_sub_q, concat_q, conv2d_q, dense_q, depthwise_conv2d_q, global_avg_pool_q, map_lut, matmul_q,
    matmul_transposed_q, mul_q, pool2d_q, requantize, reshape_q, slice_q, softmax_q, transpose_q, unary_lut,
    Requantizer,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("calibration needs at least one input sample")]
    EmptyCalibration,
    #[error("calibration does not match the graph: {0}")]
    Mismatch(String),
    #[error("graph is not quantized: {0}")]
    NotQuantized(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Observed real interval of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f32,
    pub max: f32,
}

impl Range {
    pub const EMPTY: Range = Range { min: f32::INFINITY, max: f32::NEG_INFINITY };

    pub fn of(data: &[f32]) -> Self {
        let mut r = Self::EMPTY;
        r.observe(data);
        r
    }

    pub fn observe(&mut self, data: &[f32]) {
        for &v in data {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    pub fn union(self, other: Range) -> Range {
        Range { min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    pub fn qparams(self) -> QuantParams {
        if self.min > self.max {
            return QuantParams::from_range(0.0, 0.0);
        }
        QuantParams::from_range(self.min, self.max)
    }
}

/// Attention intermediates tracked per attention node, in this order.
pub const ATTENTION_INTERNALS: [&str; 6] = ["q", "k", "v", "scores", "probs", "context"];

/// Per-value activation ranges gathered from float execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub values: Vec<Range>,
    /// Node index → ranges of [`ATTENTION_INTERNALS`].
    pub attention: BTreeMap<usize, [Range; 6]>,
    pub samples: usize,
}

impl Calibration {
    fn empty(graph: &ModelGraph) -> Self {
        Self { values: vec![Range::EMPTY; graph.values.len()], attention: BTreeMap::new(), samples: 0 }
    }

    /// Ranges from a single sample; merge several with [`Calibration::merge`].
    pub fn observe(graph: &ModelGraph, inputs: &[Tensor]) -> Result<Self, QuantError> {
        let mut cal = Self::empty(graph);
        run_float_observed(graph, inputs, &mut |obs| {
            let Ok(data) = obs.tensor.as_f32() else { return };
            cal.values[obs.value].observe(data);
            if let (Some(node), Some(tr)) = (obs.node, obs.attention) {
                let slot = cal.attention.entry(node).or_insert([Range::EMPTY; 6]);
                for (r, t) in slot.iter_mut().zip([&tr.q, &tr.k, &tr.v, &tr.scores, &tr.probs, &tr.context]) {
                    r.observe(t.as_f32().unwrap_or(&[]));
                }
            }
        })?;
        cal.samples = 1;
        Ok(cal)
    }

    pub fn merge(mut self, other: &Calibration) -> Result<Self, QuantError> {
        if self.values.len() != other.values.len() {
            return Err(QuantError::Mismatch(format!("{} vs {} values", self.values.len(), other.values.len())));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.union(*b);
        }
        for (node, ranges) in &other.attention {
            let slot = self.attention.entry(*node).or_insert([Range::EMPTY; 6]);
            for (a, b) in slot.iter_mut().zip(ranges) {
                *a = a.union(*b);
            }
        }
        self.samples += other.samples;
        Ok(self)
    }
}

/// Min/max ranges of every activation over `samples` (one input list per sample).
pub fn calibrate(graph: &ModelGraph, samples: &[Vec<Tensor>]) -> Result<Calibration, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    let mut cal = Calibration::empty(graph);
    for s in samples {
        cal = cal.merge(&Calibration::observe(graph, s)?)?;
    }
    Ok(cal)
}

/// Folds every batch norm that directly follows a conv, depthwise conv or
/// dense layer (whose output has no other reader) into that layer.
pub fn fold_batchnorms(graph: &ModelGraph) -> Result<ModelGraph, QuantError> {
    let mut g = graph.clone();
    let mut i = 0;
    while i < g.nodes.len() {
        let Op::BatchNorm { eps } = g.nodes[i].op else {
            i += 1;
            continue;
        };
        let src = g.nodes[i].inputs[0];
        let foldable = g.producer(src).filter(|&p| {
            matches!(g.nodes[p].op, Op::Conv2d { .. } | Op::DepthwiseConv2d { .. } | Op::Dense { .. })
                && g.consumers(src).len() == 1
                && !g.outputs.contains(&src)
                && g.logits != Some(src)
        });
        let Some(p) = foldable else {
            i += 1;
            continue;
        };
        let bn = g.nodes[i].clone();
        let t = |n: &str| g.weight(n).cloned();
        let (gamma, beta, mean, var) = (t(&bn.params[0])?, t(&bn.params[1])?, t(&bn.params[2])?, t(&bn.params[3])?);
        let params = BatchNormParams { gamma: &gamma, beta: &beta, mean: &mean, var: &var, eps };
        let prod = g.nodes[p].clone();
        let w = g.weight(&prod.params[0])?.clone();
        let b = prod.params.get(1).map(|n| g.weight(n).cloned()).transpose()?;
        let (fw, fb) = fold_batchnorm(&w, b.as_ref(), params)
            .map_err(|source| GraphError::Node { node: bn.name.clone(), source })?;
        let bias_name = match prod.params.get(1) {
            Some(n) => n.clone(),
            None => g.fresh_weight_name(&format!("{}/bias", prod.name)),
        };
        g.weights.insert(prod.params[0].clone(), fw);
        g.weights.insert(bias_name.clone(), fb);
        let node = &mut g.nodes[p];
        node.params = vec![prod.params[0].clone(), bias_name];
        match &mut node.op {
            Op::Conv2d { bias, .. } | Op::DepthwiseConv2d { bias, .. } | Op::Dense { bias } => *bias = true,
            _ => unreachable!(),
        }
        node.output = bn.output;
        g.nodes.remove(i);
    }
    g.compact();
    g.check()?;
    Ok(g)
}

/// Whether the op forwards its input codes unchanged (output shares the
/// input's quantization parameters).
fn passes_through(op: &Op) -> bool {
    matches!(op, Op::Reshape { .. } | Op::Transpose { .. } | Op::Slice { .. } | Op::MaxPool2d { .. })
}

fn quantize_weight(t: &Tensor) -> Result<Tensor, TensorError> {
    let absmax = t.as_f32()?.iter().fold(0f32, |m, &v| m.max(v.abs()));
    quantize_tensor(t, QuantParams::symmetric(absmax))
}

fn quantize_bias(t: &Tensor, input_scale: f32, weight_scale: f32) -> Result<Tensor, TensorError> {
    let scale = (input_scale as f64 * weight_scale as f64) as f32;
    quantize_tensor_i32(t, QuantParams::new(scale.max(f32::MIN_POSITIVE), 0, DType::I32)?)
}

/// Converts a float graph (normally batch-norm folded) into its INT8 form:
/// asymmetric per-tensor activations from `cal`, symmetric INT8 weights and
/// INT32 biases at `s_in · s_w`. Batch-norm style statistics stay FLOAT32.
pub fn quantize_graph(graph: &ModelGraph, cal: &Calibration) -> Result<ModelGraph, QuantError> {
    if cal.values.len() != graph.values.len() {
        return Err(QuantError::Mismatch(format!(
            "calibration covers {} values, graph has {}",
            cal.values.len(),
            graph.values.len()
        )));
    }
    if cal.samples == 0 {
        return Err(QuantError::EmptyCalibration);
    }
    let mut q = graph.clone();
    for &i in &graph.inputs {
        q.values[i].quant = Some(cal.values[i].qparams());
    }
    for node in &graph.nodes {
        let qp = if passes_through(&node.op) {
            q.values[node.inputs[0]].quant.ok_or_else(|| QuantError::Mismatch(format!("`{}` input unset", node.name)))?
        } else {
            cal.values[node.output].qparams()
        };
        q.values[node.output].quant = Some(qp);
    }
    for v in &mut q.values {
        v.dtype = DType::I8;
    }
    for (idx, node) in graph.nodes.iter().enumerate() {
        let in_scale = q.values[node.inputs[0]].quant.map(|p| p.scale).unwrap_or(1.0);
        match node.op {
            Op::Conv2d { .. } | Op::DepthwiseConv2d { .. } | Op::Dense { .. } => {
                let w = quantize_weight(graph.weight(&node.params[0])?)?;
                let ws = w.quant().unwrap().scale;
                if let Some(b) = node.params.get(1) {
                    q.weights.insert(b.clone(), quantize_bias(graph.weight(b)?, in_scale, ws)?);
                }
                q.weights.insert(node.params[0].clone(), w);
            }
            Op::LayerNorm { .. } => {
                for p in &node.params {
                    q.weights.insert(p.clone(), quantize_weight(graph.weight(p)?)?);
                }
            }
            Op::Attention => {
                let ranges = cal
                    .attention
                    .get(&idx)
                    .ok_or_else(|| QuantError::Mismatch(format!("no attention ranges for `{}`", node.name)))?;
                let aux: Vec<QuantParams> = ranges.iter().map(|r| r.qparams()).collect();
                let context_scale = aux[5].scale;
                for pair in 0..4 {
                    let (wn, bn) = (&node.params[2 * pair], &node.params[2 * pair + 1]);
                    let w = quantize_weight(graph.weight(wn)?)?;
                    let src_scale = if pair == 3 { context_scale } else { in_scale };
                    let b = quantize_bias(graph.weight(bn)?, src_scale, w.quant().unwrap().scale)?;
                    q.weights.insert(wn.clone(), w);
                    q.weights.insert(bn.clone(), b);
                }
                q.nodes[idx].aux_quant = aux;
            }
            _ => {}
        }
    }
    Ok(q)
}

/// A value produced during quantized execution.
#[derive(Debug, Clone, Copy)]
pub struct QuantObservation<'a> {
    pub value: ValueId,
    pub node: Option<usize>,
    pub tensor: &'a Tensor,
}

pub fn run_quantized(graph: &ModelGraph, inputs: &[Tensor]) -> Result<Vec<Tensor>, QuantError> {
    run_quantized_observed(graph, inputs, &mut |_| {})
}

/// Integer execution; FLOAT32 inputs are quantized with the graph's input
/// parameters first.
pub fn run_quantized_observed(
    graph: &ModelGraph,
    inputs: &[Tensor],
    observer: &mut dyn FnMut(QuantObservation<'_>),
) -> Result<Vec<Tensor>, QuantError> {
    if inputs.len() != graph.inputs.len() {
        return Err(GraphError::Malformed(format!("graph takes {} inputs, got {}", graph.inputs.len(), inputs.len())).into());
    }
    let mut last_use = vec![usize::MAX; graph.values.len()];
    for (i, n) in graph.nodes.iter().enumerate() {
        n.inputs.iter().for_each(|&v| last_use[v] = i);
    }
    let mut slots: Vec<Option<Tensor>> = vec![None; graph.values.len()];
    for (&id, t) in graph.inputs.iter().zip(inputs) {
        let info = &graph.values[id];
        let qp = info.quant.ok_or_else(|| QuantError::NotQuantized(format!("input `{}` has no parameters", info.name)))?;
        if info.shape.as_slice() != t.shape() {
            return Err(TensorError::Shape(format!("input `{}` expects {:?}, got {:?}", info.name, info.shape, t.shape())).into());
        }
        let t = match t.dtype() {
            DType::F32 => quantize_tensor(t, qp)?,
            DType::I8 => requantize(t, qp)?,
            other => return Err(TensorError::DType(format!("cannot feed {other} input")).into()),
        };
        observer(QuantObservation { value: id, node: None, tensor: &t });
        slots[id] = Some(t);
    }
    for (i, node) in graph.nodes.iter().enumerate() {
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|&v| slots[v].as_ref().ok_or_else(|| GraphError::Malformed(format!("value {v} not available"))))
            .collect::<Result<_, _>>()?;
        let out = eval_node_quant(graph, node, &args)?;
        observer(QuantObservation { value: node.output, node: Some(i), tensor: &out });
        slots[node.output] = Some(out);
        for &v in &node.inputs {
            if last_use[v] == i && !graph.outputs.contains(&v) {
                slots[v] = None;
            }
        }
    }
    graph
        .outputs
        .iter()
        .map(|&o| slots[o].clone().ok_or_else(|| GraphError::Malformed(format!("output {o} missing")).into()))
        .collect()
}

/// Evaluates one node of a quantized graph on INT8 inputs.
pub fn eval_node_quant(graph: &ModelGraph, node: &Node, args: &[&Tensor]) -> Result<Tensor, QuantError> {
    let info = &graph.values[node.output];
    let out_qp = info.quant.ok_or_else(|| QuantError::NotQuantized(format!("value `{}` has no parameters", info.name)))?;
    let p = graph.node_params(node)?;
    let wrap = |source: TensorError| QuantError::Graph(GraphError::Node { node: node.name.clone(), source });
    let x = args[0];
    let out = match &node.op {
        Op::Conv2d { stride, padding, .. } => conv2d_q(x, p[0], p.get(1).copied(), *stride, *padding, out_qp),
        Op::DepthwiseConv2d { stride, padding, .. } => {
            depthwise_conv2d_q(x, p[0], p.get(1).copied(), *stride, *padding, out_qp)
        }
        Op::Dense { .. } => dense_q(x, p[0], p.get(1).copied(), out_qp),
        Op::Relu6 => map_lut(x, out_qp, |v| v.clamp(0.0, 6.0)),
        Op::Sigmoid => map_lut(x, out_qp, crate::tensor::sigmoid_scalar),
        Op::MaxPool2d { window, stride, padding } => pool2d_q(x, PoolKind::Max, *window, *stride, *padding, out_qp),
        Op::AvgPool2d { window, stride, padding } => pool2d_q(x, PoolKind::Avg, *window, *stride, *padding, out_qp),
        Op::GlobalAvgPool => global_avg_pool_q(x, out_qp),
        Op::Softmax => softmax_q(x, out_qp),
        Op::Add => add_sub_q(x, args[1], false, out_qp),
        Op::Sub => add_sub_q(x, args[1], true, out_qp),
        Op::Mul => mul_q(x, args[1], out_qp),
        Op::Concat => concat_q(args, out_qp),
        Op::Reshape { shape } => reshape_q(x, shape, out_qp),
        Op::Transpose { perm } => transpose_q(x, perm, out_qp),
        Op::Slice { axis, start, len } => slice_q(x, *axis, *start, *len, out_qp),
        Op::Attention => attention_q(node, x, &p, out_qp),
        Op::LayerNorm { .. } | Op::PosEncoding | Op::BatchNorm { .. } | Op::SubSpectralNorm { .. } | Op::SquaredDifference => {
            float_fallback(&node.op, args, &p, out_qp)
        }
    };
    out.map_err(wrap)
}

fn attention_q(node: &Node, x: &Tensor, p: &[&Tensor], out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let [q_qp, k_qp, v_qp, s_qp, p_qp, c_qp] = node.aux_quant[..] else {
        return Err(TensorError::DType(format!("attention `{}` lacks internal parameters", node.name)));
    };
    let [_, d] = *x.shape() else {
        return Err(crate::tensor::shape_err!("attention expects [n, d], got {:?}", x.shape()));
    };
    let q = dense_q(x, p[0], Some(p[1]), q_qp)?;
    let k = dense_q(x, p[2], Some(p[3]), k_qp)?;
    let v = dense_q(x, p[4], Some(p[5]), v_qp)?;
    let scores = matmul_transposed_q(&q, &k, 1.0 / libm::sqrt(d as f64), s_qp)?;
    let probs = softmax_q(&scores, p_qp)?;
    let context = matmul_q(&probs, &v, c_qp)?;
    dense_q(&context, p[6], Some(p[7]), out_qp)
}

/// Dequantize → float op → requantize, for ops without an integer kernel.
fn float_fallback(op: &Op, args: &[&Tensor], params: &[&Tensor], out_qp: QuantParams) -> Result<Tensor, TensorError> {
    let to_float = |t: &&Tensor| if t.dtype() == DType::F32 { Ok((*t).clone()) } else { dequantize_tensor(t) };
    let fa: Vec<Tensor> = args.iter().map(to_float).collect::<Result<_, _>>()?;
    let fp: Vec<Tensor> = params.iter().map(to_float).collect::<Result<_, _>>()?;
    let (y, _) = eval_op_float(op, &fa.iter().collect::<Vec<_>>(), &fp.iter().collect::<Vec<_>>())?;
    quantize_tensor(&y, out_qp)
}
