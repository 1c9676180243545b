//! FLOAT32 reference executor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{GraphError, ModelGraph, Node, Op, ValueId};
use crate::tensor::{
    self, add, batch_norm, concat, conv2d, depthwise_conv2d, dense, global_avg_pool, layer_norm, mul, pool2d, relu6,
    sigmoid, sinusoidal_positions, single_head_attention_traced, slice, softmax, squared_difference, sub, transpose,
    AttentionTrace, AttentionWeights, BatchNormParams, PoolKind, Tensor, TensorError,
};

/// A value produced during float execution, passed to observers.
#[derive(Debug, Clone, Copy)]
pub struct FloatObservation<'a> {
    pub value: ValueId,
    /// Producing node, `None` for graph inputs.
    pub node: Option<usize>,
    pub tensor: &'a Tensor,
    pub attention: Option<&'a AttentionTrace>,
}

pub fn run_float(graph: &ModelGraph, inputs: &[Tensor]) -> Result<Vec<Tensor>, GraphError> {
    run_float_observed(graph, inputs, &mut |_| {})
}

/// Runs the graph, calling `observer` on every input and node output.
/// Intermediate values are dropped after their last use.
pub fn run_float_observed(
    graph: &ModelGraph,
    inputs: &[Tensor],
    observer: &mut dyn FnMut(FloatObservation<'_>),
) -> Result<Vec<Tensor>, GraphError> {
    if inputs.len() != graph.inputs.len() {
        return Err(GraphError::Malformed(format!("graph takes {} inputs, got {}", graph.inputs.len(), inputs.len())));
    }
    let mut last_use = vec![usize::MAX; graph.values.len()];
    for (i, n) in graph.nodes.iter().enumerate() {
        for &v in &n.inputs {
            last_use[v] = i;
        }
    }
    for &o in &graph.outputs {
        last_use[o] = usize::MAX - 1;
    }
    let mut slots: Vec<Option<Tensor>> = vec![None; graph.values.len()];
    for (&id, t) in graph.inputs.iter().zip(inputs) {
        let declared = &graph.values[id].shape;
        if !declared.contains(&0) && declared.as_slice() != t.shape() {
            return Err(GraphError::Tensor(tensor::shape_err!(
                "input `{}` expects {declared:?}, got {:?}",
                graph.values[id].name,
                t.shape()
            )));
        }
        let t = if t.dtype() == tensor::DType::F32 { t.clone() } else { tensor::dequantize_tensor(t)? };
        observer(FloatObservation { value: id, node: None, tensor: &t, attention: None });
        slots[id] = Some(t);
    }
    for (i, node) in graph.nodes.iter().enumerate() {
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|&v| slots[v].as_ref().ok_or_else(|| GraphError::Malformed(format!("value {v} not available"))))
            .collect::<Result<_, _>>()?;
        let (out, trace) = eval_node_float_traced(graph, node, &args)?;
        observer(FloatObservation { value: node.output, node: Some(i), tensor: &out, attention: trace.as_ref() });
        slots[node.output] = Some(out);
        for &v in &node.inputs {
            if last_use[v] == i {
                slots[v] = None;
            }
        }
    }
    graph
        .outputs
        .iter()
        .map(|&o| slots[o].take().ok_or_else(|| GraphError::Malformed(format!("output {o} missing"))))
        .collect()
}

/// Evaluates one node on float inputs.
pub fn eval_node_float(graph: &ModelGraph, node: &Node, args: &[&Tensor]) -> Result<Tensor, GraphError> {
    eval_node_float_traced(graph, node, args).map(|(t, _)| t)
}

fn eval_node_float_traced(
    graph: &ModelGraph,
    node: &Node,
    args: &[&Tensor],
) -> Result<(Tensor, Option<AttentionTrace>), GraphError> {
    let p = graph.node_params(node)?;
    eval_op_float(&node.op, args, &p).map_err(|source| GraphError::Node { node: node.name.clone(), source })
}

/// Float semantics of `op` given its inputs and parameters in declaration order.
pub fn eval_op_float(op: &Op, args: &[&Tensor], p: &[&Tensor]) -> Result<(Tensor, Option<AttentionTrace>), TensorError> {
    let x = args[0];
    let out = match op {
        Op::Conv2d { stride, padding, .. } => conv2d(x, p[0], p.get(1).copied(), *stride, *padding),
        Op::DepthwiseConv2d { stride, padding, .. } => depthwise_conv2d(x, p[0], p.get(1).copied(), *stride, *padding),
        Op::Dense { .. } => dense(x, p[0], p.get(1).copied()),
        Op::Relu6 => relu6(x),
        Op::Sigmoid => sigmoid(x),
        Op::MaxPool2d { window, stride, padding } => pool2d(x, PoolKind::Max, *window, *stride, *padding),
        Op::AvgPool2d { window, stride, padding } => pool2d(x, PoolKind::Avg, *window, *stride, *padding),
        Op::GlobalAvgPool => global_avg_pool(x),
        Op::Softmax => softmax(x),
        Op::LayerNorm { eps } => layer_norm(x, p[0], p[1], *eps),
        Op::Attention => {
            let w = AttentionWeights { wq: p[0], bq: p[1], wk: p[2], bk: p[3], wv: p[4], bv: p[5], wo: p[6], bo: p[7] };
            let (out, trace) = single_head_attention_traced(x, w)?;
            return Ok((out, Some(trace)));
        }
        Op::Add => add(x, args[1]),
        Op::Mul => mul(x, args[1]),
        Op::Sub => sub(x, args[1]),
        Op::SquaredDifference => squared_difference(x, args[1]),
        Op::Concat => concat(args),
        Op::Reshape { shape } => x.reshape(shape.clone()),
        Op::Transpose { perm } => transpose(x, perm),
        Op::Slice { axis, start, len } => slice(x, *axis, *start, *len),
        Op::PosEncoding => {
            let [n, d] = *x.shape() else {
                return Err(tensor::shape_err!("positional encoding expects [n, d]"));
            };
            sinusoidal_positions(n, d).and_then(|pe| add(x, &pe))
        }
        Op::BatchNorm { eps } => batch_norm(x, BatchNormParams { gamma: p[0], beta: p[1], mean: p[2], var: p[3], eps: *eps }),
        Op::SubSpectralNorm { sub_bands, eps } => sub_spectral_norm(x, p, *sub_bands, *eps),
    };
    Ok((out?, None))
}

/// Batch norm with one set of statistics per frequency band along axis 0.
fn sub_spectral_norm(x: &Tensor, p: &[&Tensor], sub_bands: usize, eps: f32) -> Result<Tensor, TensorError> {
    let [f, t, c] = *x.shape() else {
        return Err(tensor::shape_err!("sub-spectral norm expects [F, T, C], got {:?}", x.shape()));
    };
    if sub_bands == 0 || f % sub_bands != 0 || p.iter().any(|t| t.len() != sub_bands * c) {
        return Err(tensor::shape_err!("sub-spectral norm: {f} bands into {sub_bands}, params for {c} channels"));
    }
    let (g, b, m, v) = (p[0].as_f32()?, p[1].as_f32()?, p[2].as_f32()?, p[3].as_f32()?);
    let band_rows = f / sub_bands;
    let xs = x.as_f32()?;
    let mut out = vec![0f32; xs.len()];
    for fi in 0..f {
        let band = fi / band_rows;
        for ti in 0..t {
            for ci in 0..c {
                let k = band * c + ci;
                if !(v[k] > 0.0) {
                    return Err(TensorError::Numerical(format!("sub-spectral variance {} is not positive", v[k])));
                }
                let i = (fi * t + ti) * c + ci;
                let inv = 1.0 / libm::sqrt(v[k] as f64 + eps as f64);
                out[i] = ((xs[i] as f64 - m[k] as f64) * inv * g[k] as f64 + b[k] as f64) as f32;
            }
        }
    }
    Tensor::from_f32(x.shape().to_vec(), out)
}
