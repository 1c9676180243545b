//! Static-shape model graph shared by the executors, the model builders and
//! the deployment compiler.
//!
//! Nodes are stored in topological order and each produces exactly one
//! value. Weights live in a name-keyed map so the weight container can
//! address them directly.

mod exec;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    broadcast_shape, conv_extent, num_elements, permuted_shape, DType, Padding, QuantParams, Tensor, TensorError,
};

pub use exec::{eval_node_float, eval_op_float, run_float, run_float_observed, FloatObservation};

pub type ValueId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),
    #[error("node `{node}`: {source}")]
    Node { node: String, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Kws,
    Emotion,
    Custom,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Kws => "kws",
            ModelKind::Emotion => "emotion",
            ModelKind::Custom => "custom",
        })
    }
}

/// Layer kinds as seen by the support policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerKind {
    Conv2d,
    DepthwiseConv2d,
    Dense,
    Relu6,
    Maxpool2d,
    Avgpool2d,
    GlobalAvgPool,
    Softmax,
    LayerNorm,
    AttentionSingleHead,
    Add,
    Mul,
    Sub,
    Concat,
    Reshape,
    Transpose,
    Slice,
    Sigmoid,
    PosEncoding,
    Batchnorm,
    SquaredDifference,
    SubSpectralNorm,
}

impl LayerKind {
    pub const ALL: [LayerKind; 22] = [
        LayerKind::Conv2d,
        LayerKind::DepthwiseConv2d,
        LayerKind::Dense,
        LayerKind::Relu6,
        LayerKind::Maxpool2d,
        LayerKind::Avgpool2d,
        LayerKind::GlobalAvgPool,
        LayerKind::Softmax,
        LayerKind::LayerNorm,
        LayerKind::AttentionSingleHead,
        LayerKind::Add,
        LayerKind::Mul,
        LayerKind::Sub,
        LayerKind::Concat,
        LayerKind::Reshape,
        LayerKind::Transpose,
        LayerKind::Slice,
        LayerKind::Sigmoid,
        LayerKind::PosEncoding,
        LayerKind::Batchnorm,
        LayerKind::SquaredDifference,
        LayerKind::SubSpectralNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "CONV2D",
            LayerKind::DepthwiseConv2d => "DEPTHWISE_CONV2D",
            LayerKind::Dense => "DENSE",
            LayerKind::Relu6 => "RELU6",
            LayerKind::Maxpool2d => "MAXPOOL2D",
            LayerKind::Avgpool2d => "AVGPOOL2D",
            LayerKind::GlobalAvgPool => "GLOBAL_AVG_POOL",
            LayerKind::Softmax => "SOFTMAX",
            LayerKind::LayerNorm => "LAYER_NORM",
            LayerKind::AttentionSingleHead => "ATTENTION_SINGLE_HEAD",
            LayerKind::Add => "ADD",
            LayerKind::Mul => "MUL",
            LayerKind::Sub => "SUB",
            LayerKind::Concat => "CONCAT",
            LayerKind::Reshape => "RESHAPE",
            LayerKind::Transpose => "TRANSPOSE",
            LayerKind::Slice => "SLICE",
            LayerKind::Sigmoid => "SIGMOID",
            LayerKind::PosEncoding => "POS_ENCODING",
            LayerKind::Batchnorm => "BATCHNORM",
            LayerKind::SquaredDifference => "SQUARED_DIFFERENCE",
            LayerKind::SubSpectralNorm => "SUB_SPECTRAL_NORM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A layer with its static attributes. Weight tensors are referenced by
/// name from [`Node::params`] in the order documented per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// params: `[w: kh×kw×cin×cout]` or `[w, b]`
    Conv2d { kernel: (usize, usize), stride: (usize, usize), padding: Padding, bias: bool },
    /// params: `[w: kh×kw×c]` or `[w, b]`
    DepthwiseConv2d { kernel: (usize, usize), stride: (usize, usize), padding: Padding, bias: bool },
    /// Applied over the last axis. params: `[w: in×out]` or `[w, b]`
    Dense { bias: bool },
    Relu6,
    Sigmoid,
    MaxPool2d { window: (usize, usize), stride: (usize, usize), padding: Padding },
    AvgPool2d { window: (usize, usize), stride: (usize, usize), padding: Padding },
    /// Mean over all but the last axis.
    GlobalAvgPool,
    /// Over the last axis.
    Softmax,
    /// params: `[gamma, beta]`
    LayerNorm { eps: f32 },
    /// params: `[wq, bq, wk, bk, wv, bv, wo, bo]`
    Attention,
    Add,
    Mul,
    Sub,
    SquaredDifference,
    /// Along the last axis.
    Concat,
    Reshape { shape: Vec<usize> },
    Transpose { perm: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    /// Adds the sinusoidal table for the input's `[n, d]` shape.
    PosEncoding,
    /// params: `[gamma, beta, mean, var]`
    BatchNorm { eps: f32 },
    /// Batch norm with separate statistics per frequency sub-band (axis 0).
    /// params: `[gamma, beta, mean, var]`, each `[sub_bands · C]`.
    SubSpectralNorm { sub_bands: usize, eps: f32 },
}

impl Op {
    pub fn kind(&self) -> LayerKind {
        match self {
            Op::Conv2d { .. } => LayerKind::Conv2d,
            Op::DepthwiseConv2d { .. } => LayerKind::DepthwiseConv2d,
            Op::Dense { .. } => LayerKind::Dense,
            Op::Relu6 => LayerKind::Relu6,
            Op::Sigmoid => LayerKind::Sigmoid,
            Op::MaxPool2d { .. } => LayerKind::Maxpool2d,
            Op::AvgPool2d { .. } => LayerKind::Avgpool2d,
            Op::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Op::Softmax => LayerKind::Softmax,
            Op::LayerNorm { .. } => LayerKind::LayerNorm,
            Op::Attention => LayerKind::AttentionSingleHead,
            Op::Add => LayerKind::Add,
            Op::Mul => LayerKind::Mul,
            Op::Sub => LayerKind::Sub,
            Op::SquaredDifference => LayerKind::SquaredDifference,
            Op::Concat => LayerKind::Concat,
            Op::Reshape { .. } => LayerKind::Reshape,
            Op::Transpose { .. } => LayerKind::Transpose,
            Op::Slice { .. } => LayerKind::Slice,
            Op::PosEncoding => LayerKind::PosEncoding,
            Op::BatchNorm { .. } => LayerKind::Batchnorm,
            Op::SubSpectralNorm { .. } => LayerKind::SubSpectralNorm,
        }
    }

    fn expected_params(&self) -> usize {
        match self {
            Op::Conv2d { bias, .. } | Op::DepthwiseConv2d { bias, .. } | Op::Dense { bias } => 1 + *bias as usize,
            Op::LayerNorm { .. } => 2,
            Op::Attention => 8,
            Op::BatchNorm { .. } | Op::SubSpectralNorm { .. } => 4,
            _ => 0,
        }
    }

    fn expected_inputs(&self) -> Option<usize> {
        match self {
            Op::Add | Op::Mul | Op::Sub | Op::SquaredDifference => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }

    /// Ops whose output is a pure rearrangement of the input.
    pub fn is_layout_only(&self) -> bool {
        matches!(self, Op::Reshape { .. } | Op::Transpose { .. } | Op::Slice { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInfo {
    pub name: String,
    /// Extents; `0` marks a dimension only known at run time.
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    /// Architecture-table row this node belongs to (for summaries).
    pub group: String,
    pub op: Op,
    pub inputs: Vec<ValueId>,
    pub output: ValueId,
    pub params: Vec<String>,
    /// Quantization of op-internal intermediates (attention only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aux_quant: Vec<QuantParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub kind: ModelKind,
    pub labels: Vec<String>,
    pub values: Vec<ValueInfo>,
    pub inputs: Vec<ValueId>,
    pub outputs: Vec<ValueId>,
    /// Pre-softmax value whose dequantized form feeds the host-side softmax.
    pub logits: Option<ValueId>,
    pub nodes: Vec<Node>,
    /// Leading batch extent the graph inputs were declared with.
    pub input_batch: usize,
    #[serde(skip)]
    pub weights: BTreeMap<String, Tensor>,
}

impl ModelGraph {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            labels: Vec::new(),
            values: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            logits: None,
            nodes: Vec::new(),
            input_batch: 1,
            weights: BTreeMap::new(),
        }
    }

    pub fn value(&self, id: ValueId) -> &ValueInfo {
        &self.values[id]
    }

    pub fn value_by_name(&self, name: &str) -> Option<ValueId> {
        self.values.iter().position(|v| v.name == name)
    }

    pub fn node_by_name(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Index of the node producing `value`, if any.
    pub fn producer(&self, value: ValueId) -> Option<usize> {
        self.nodes.iter().position(|n| n.output == value)
    }

    /// Indices of nodes reading `value`.
    pub fn consumers(&self, value: ValueId) -> Vec<usize> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.inputs.contains(&value)).map(|(i, _)| i).collect()
    }

    pub fn weight(&self, name: &str) -> Result<&Tensor, GraphError> {
        self.weights.get(name).ok_or_else(|| GraphError::MissingWeight(name.to_string()))
    }

    pub fn node_params(&self, node: &Node) -> Result<Vec<&Tensor>, GraphError> {
        node.params.iter().map(|p| self.weight(p)).collect()
    }

    /// Number of scalar parameters held by one node.
    pub fn node_param_count(&self, node: &Node) -> usize {
        node.params.iter().filter_map(|p| self.weights.get(p)).map(Tensor::len).sum()
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| self.node_param_count(n)).sum()
    }

    /// Bytes of constant data referenced by nodes.
    pub fn param_bytes(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| n.params.iter())
            .filter_map(|p| self.weights.get(p))
            .map(Tensor::size_bytes)
            .sum()
    }

    pub fn is_quantized(&self) -> bool {
        self.values.iter().all(|v| v.dtype == DType::I8 && v.quant.is_some())
    }

    /// Checks ordering, arity, weight presence and shape consistency.
    pub fn check(&self) -> Result<(), GraphError> {
        let mut defined = vec![false; self.values.len()];
        for &i in &self.inputs {
            *defined.get_mut(i).ok_or_else(|| malformed(format!("input value {i} out of range")))? = true;
        }
        for node in &self.nodes {
            for &i in &node.inputs {
                if !*defined.get(i).unwrap_or(&false) {
                    return Err(malformed(format!("node `{}` reads value {i} before it is produced", node.name)));
                }
            }
            let out = defined.get_mut(node.output).ok_or_else(|| malformed(format!("node `{}` output out of range", node.name)))?;
            if *out {
                return Err(malformed(format!("value {} produced twice", node.output)));
            }
            *out = true;
            if node.params.len() != node.op.expected_params() {
                return Err(malformed(format!("node `{}` has {} params, expected {}", node.name, node.params.len(), node.op.expected_params())));
            }
            if let Some(n) = node.op.expected_inputs() {
                if node.inputs.len() != n {
                    return Err(malformed(format!("node `{}` has {} inputs, expected {n}", node.name, node.inputs.len())));
                }
            } else if node.inputs.is_empty() {
                return Err(malformed(format!("node `{}` has no inputs", node.name)));
            }
            let in_shapes: Vec<&[usize]> = node.inputs.iter().map(|&i| self.values[i].shape.as_slice()).collect();
            let params = self.node_params(node)?;
            let p_shapes: Vec<&[usize]> = params.iter().map(|t| t.shape()).collect();
            if self.values[node.output].shape.contains(&0) || in_shapes.iter().any(|s| s.contains(&0)) {
                continue;
            }
            let inferred = infer_shape(&node.op, &in_shapes, &p_shapes)
                .map_err(|source| GraphError::Node { node: node.name.clone(), source })?;
            if inferred != self.values[node.output].shape {
                return Err(malformed(format!(
                    "node `{}` declares {:?}, inferred {inferred:?}",
                    node.name, self.values[node.output].shape
                )));
            }
        }
        for &o in &self.outputs {
            if !defined.get(o).copied().unwrap_or(false) {
                return Err(malformed(format!("output value {o} is never produced")));
            }
        }
        Ok(())
    }

    /// `(node name, input shapes, output shape)` for every node.
    pub fn shape_trace(&self) -> Vec<(String, Vec<Vec<usize>>, Vec<usize>)> {
        self.nodes
            .iter()
            .map(|n| {
                let ins = n.inputs.iter().map(|&i| self.values[i].shape.clone()).collect();
                (n.name.clone(), ins, self.values[n.output].shape.clone())
            })
            .collect()
    }

    pub fn add_value(&mut self, name: String, shape: Vec<usize>) -> ValueId {
        self.values.push(ValueInfo { name, shape, dtype: DType::F32, quant: None });
        self.values.len() - 1
    }

    /// A weight name not yet present in the map, derived from `base`.
    pub fn fresh_weight_name(&self, base: &str) -> String {
        if !self.weights.contains_key(base) {
            return base.to_string();
        }
        (1..).map(|i| format!("{base}#{i}")).find(|n| !self.weights.contains_key(n)).unwrap()
    }

    /// Drops values and weights no node, input or output refers to, and
    /// renumbers the remaining values densely.
    pub fn compact(&mut self) {
        let mut used = vec![false; self.values.len()];
        for &v in self.inputs.iter().chain(&self.outputs).chain(self.logits.iter()) {
            used[v] = true;
        }
        for n in &self.nodes {
            used[n.output] = true;
            n.inputs.iter().for_each(|&v| used[v] = true);
        }
        let mut remap = vec![usize::MAX; self.values.len()];
        let mut kept = Vec::new();
        for (i, v) in core::mem::take(&mut self.values).into_iter().enumerate() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(v);
            }
        }
        self.values = kept;
        self.inputs.iter_mut().chain(self.outputs.iter_mut()).chain(self.logits.iter_mut()).for_each(|v| *v = remap[*v]);
        for n in &mut self.nodes {
            n.output = remap[n.output];
            n.inputs.iter_mut().for_each(|v| *v = remap[*v]);
        }
        let referenced: alloc::collections::BTreeSet<&String> = self.nodes.iter().flat_map(|n| n.params.iter()).collect();
        let keep: Vec<String> = self.weights.keys().filter(|k| referenced.contains(k)).cloned().collect();
        let mut weights = core::mem::take(&mut self.weights);
        self.weights = keep.into_iter().map(|k| {
            let t = weights.remove(&k).unwrap();
            (k, t)
        }).collect();
    }

    /// Consecutive nodes sharing a group, collapsed into table rows.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        for node in &self.nodes {
            let params = self.node_param_count(node);
            let out = self.values[node.output].shape.clone();
            match rows.last_mut() {
                Some(row) if row.group == node.group => {
                    row.params += params;
                    row.output_shape = out;
                    row.nodes += 1;
                }
                _ => rows.push(SummaryRow {
                    group: node.group.clone(),
                    input_shape: node.inputs.first().map(|&i| self.values[i].shape.clone()).unwrap_or_default(),
                    output_shape: out,
                    params,
                    nodes: 1,
                }),
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub nodes: usize,
}

fn malformed(msg: String) -> GraphError {
    GraphError::Malformed(msg)
}

use crate::tensor::shape_err;

/// Output shape of `op` for the given input and parameter shapes.
pub fn infer_shape(op: &Op, inputs: &[&[usize]], params: &[&[usize]]) -> Result<Vec<usize>, TensorError> {
    let x = inputs.first().copied().ok_or_else(|| shape_err!("no inputs"))?;
    let spatial = |x: &[usize], k: (usize, usize), s: (usize, usize), p: Padding| -> Result<(usize, usize), TensorError> {
        let [h, w, _] = *x else { return Err(shape_err!("expected [H, W, C], got {x:?}")) };
        let (oh, _) = conv_extent(h, k.0, s.0, p).ok_or_else(|| shape_err!("kernel {k:?} does not fit {x:?}"))?;
        let (ow, _) = conv_extent(w, k.1, s.1, p).ok_or_else(|| shape_err!("kernel {k:?} does not fit {x:?}"))?;
        Ok((oh, ow))
    };
    Ok(match op {
        Op::Conv2d { kernel, stride, padding, .. } => {
            let w = params[0];
            if w.len() != 4 || w[0] != kernel.0 || w[1] != kernel.1 || x.len() != 3 || w[2] != x[2] {
                return Err(shape_err!("conv weights {w:?} incompatible with input {x:?}"));
            }
            let (oh, ow) = spatial(x, *kernel, *stride, *padding)?;
            vec![oh, ow, w[3]]
        }
        Op::DepthwiseConv2d { kernel, stride, padding, .. } => {
            let w = params[0];
            if w.len() != 3 || w[0] != kernel.0 || w[1] != kernel.1 || x.len() != 3 || w[2] != x[2] {
                return Err(shape_err!("depthwise weights {w:?} incompatible with input {x:?}"));
            }
            let (oh, ow) = spatial(x, *kernel, *stride, *padding)?;
            vec![oh, ow, x[2]]
        }
        Op::Dense { .. } => {
            let w = params[0];
            if w.len() != 2 || x.last() != Some(&w[0]) {
                return Err(shape_err!("dense weights {w:?} incompatible with input {x:?}"));
            }
            let mut s = x.to_vec();
            *s.last_mut().unwrap() = w[1];
            s
        }
        Op::MaxPool2d { window, stride, padding } | Op::AvgPool2d { window, stride, padding } => {
            let (oh, ow) = spatial(x, *window, *stride, *padding)?;
            vec![oh, ow, x[2]]
        }
        Op::GlobalAvgPool => vec![*x.last().ok_or_else(|| shape_err!("global pool on a scalar"))?],
        Op::Relu6 | Op::Sigmoid | Op::Softmax | Op::LayerNorm { .. } | Op::BatchNorm { .. } => x.to_vec(),
        Op::SubSpectralNorm { sub_bands, .. } => {
            if x.len() != 3 || *sub_bands == 0 || x[0] % sub_bands != 0 {
                return Err(shape_err!("sub-spectral norm needs [F, T, C] with F divisible by {sub_bands}"));
            }
            x.to_vec()
        }
        Op::Attention => {
            if x.len() != 2 {
                return Err(shape_err!("attention expects [n, d], got {x:?}"));
            }
            x.to_vec()
        }
        Op::PosEncoding => {
            if x.len() != 2 || x[1] % 2 != 0 {
                return Err(shape_err!("positional encoding expects [n, even d], got {x:?}"));
            }
            x.to_vec()
        }
        Op::Add | Op::Mul | Op::Sub | Op::SquaredDifference => {
            let y = inputs.get(1).ok_or_else(|| shape_err!("binary op needs two inputs"))?;
            if y.len() > x.len() {
                return Err(shape_err!("second operand {y:?} must broadcast onto {x:?}"));
            }
            broadcast_shape(x, y).ok_or_else(|| shape_err!("cannot broadcast {y:?} onto {x:?}"))?
        }
        Op::Concat => {
            let lead = &x[..x.len() - 1];
            let mut total = 0;
            for s in inputs {
                if s.len() != x.len() || &s[..s.len() - 1] != lead {
                    return Err(shape_err!("concat operands disagree: {x:?} vs {s:?}"));
                }
                total += s[s.len() - 1];
            }
            let mut s = lead.to_vec();
            s.push(total);
            s
        }
        Op::Reshape { shape } => {
            if num_elements(shape) != num_elements(x) {
                return Err(shape_err!("cannot reshape {x:?} to {shape:?}"));
            }
            shape.clone()
        }
        Op::Transpose { perm } => permuted_shape(x, perm)?,
        Op::Slice { axis, start, len } => {
            if *axis >= x.len() || *len == 0 || start + len > x[*axis] {
                return Err(shape_err!("slice {start}+{len} on axis {axis} of {x:?}"));
            }
            let mut s = x.to_vec();
            s[*axis] = *len;
            s
        }
    })
}

/// Incremental graph construction with shape inference.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: ModelGraph,
}

impl GraphBuilder {
    pub fn new(kind: ModelKind) -> Self {
        Self { graph: ModelGraph::new(kind) }
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> ValueId {
        let id = self.push_value(name, shape);
        self.graph.inputs.push(id);
        id
    }

    fn push_value(&mut self, name: &str, shape: Vec<usize>) -> ValueId {
        self.graph.values.push(ValueInfo { name: name.to_string(), shape, dtype: DType::F32, quant: None });
        self.graph.values.len() - 1
    }

    pub fn shape(&self, v: ValueId) -> &[usize] {
        &self.graph.values[v].shape
    }

    /// Appends a node; `params` are `(name, tensor)` pairs inserted into the weight map.
    pub fn node(
        &mut self,
        name: &str,
        group: &str,
        op: Op,
        inputs: &[ValueId],
        params: Vec<(String, Tensor)>,
    ) -> Result<ValueId, GraphError> {
        let in_shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.graph.values[i].shape.as_slice()).collect();
        let p_shapes: Vec<&[usize]> = params.iter().map(|(_, t)| t.shape()).collect();
        if params.len() != op.expected_params() {
            return Err(malformed(format!("node `{name}` given {} params, expected {}", params.len(), op.expected_params())));
        }
        let shape = infer_shape(&op, &in_shapes, &p_shapes).map_err(|source| GraphError::Node { node: name.to_string(), source })?;
        let out = self.push_value(name, shape);
        let mut names = Vec::with_capacity(params.len());
        for (pname, t) in params {
            if self.graph.weights.insert(pname.clone(), t).is_some() {
                return Err(malformed(format!("duplicate weight `{pname}`")));
            }
            names.push(pname);
        }
        self.graph.nodes.push(Node {
            name: name.to_string(),
            group: group.to_string(),
            op,
            inputs: inputs.to_vec(),
            output: out,
            params: names,
            aux_quant: Vec::new(),
        });
        Ok(out)
    }

    pub fn output(&mut self, v: ValueId) {
        self.graph.outputs.push(v);
    }

    pub fn set_logits(&mut self, v: ValueId) {
        self.graph.logits = Some(v);
    }

    pub fn set_labels(&mut self, labels: Vec<String>) {
        self.graph.labels = labels;
    }

    pub fn finish(self) -> Result<ModelGraph, GraphError> {
        self.graph.check()?;
        Ok(self.graph)
    }
}
