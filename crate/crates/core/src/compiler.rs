//! Deployment pass for a fixed-function INT8 accelerator: validate nodes
//! against the operator policy, rewrite unsupported constructs into
//! supported primitives, partition into accelerator and fallback segments
//! and check the on-chip parameter budget.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, LayerKind, ModelGraph, Node, Op, ValueId};
use crate::tensor::{DType, Padding, QuantParams};

/// Parameter cache of the reference accelerator.
pub const DEFAULT_BUDGET_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpSupportPolicy {
    pub supported_kinds: BTreeSet<LayerKind>,
    /// Tensors of rank > 3 may only have extents > 1 in their three
    /// innermost axes.
    pub rank_rule: bool,
    pub require_static_shapes: bool,
    pub require_int8: bool,
    pub param_cache_budget_bytes: usize,
}

impl Default for OpSupportPolicy {
    fn default() -> Self {
        use LayerKind::*;
        let supported = [
            Conv2d, DepthwiseConv2d, Dense, Relu6, Maxpool2d, Avgpool2d, GlobalAvgPool, Softmax, LayerNorm,
            AttentionSingleHead, Add, Mul, Sub, Concat, Reshape, Transpose, Slice, Sigmoid, PosEncoding, Batchnorm,
        ];
        Self {
            supported_kinds: supported.into_iter().collect(),
            rank_rule: true,
            require_static_shapes: true,
            require_int8: true,
            param_cache_budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    UnknownOp,
    RankViolation,
    DynamicShape,
    NonInt8,
    BatchedInput,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::UnknownOp => "UNKNOWN_OP",
            Reason::RankViolation => "RANK_VIOLATION",
            Reason::DynamicShape => "DYNAMIC_SHAPE",
            Reason::NonInt8 => "NON_INT8",
            Reason::BatchedInput => "BATCHED_INPUT",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeVerdict {
    pub node: String,
    pub kind: LayerKind,
    /// Empty when supported.
    pub reasons: Vec<Reason>,
    pub detail: String,
}

impl NodeVerdict {
    pub fn supported(&self) -> bool {
        self.reasons.is_empty()
    }
}

/// Whether `shape` satisfies the accelerator's rank rule.
pub fn rank_ok(shape: &[usize]) -> bool {
    shape.len() <= 3 || shape[..shape.len() - 3].iter().all(|&d| d == 1)
}

/// Per-node support verdicts, in node order.
pub fn validate(graph: &ModelGraph, policy: &OpSupportPolicy) -> Result<Vec<NodeVerdict>, GraphError> {
    graph.check()?;
    let graph_inputs: BTreeSet<ValueId> = graph.inputs.iter().copied().collect();
    Ok(graph
        .nodes
        .iter()
        .map(|node| {
            let mut reasons = Vec::new();
            let mut detail = Vec::new();
            let kind = node.op.kind();
            if !policy.supported_kinds.contains(&kind) {
                reasons.push(Reason::UnknownOp);
                detail.push(format!("{} is not in the supported set", kind.name()));
            }
            let touched: Vec<ValueId> = node.inputs.iter().copied().chain([node.output]).collect();
            if policy.rank_rule {
                if let Some(&v) = touched.iter().find(|&&v| !rank_ok(&graph.values[v].shape)) {
                    reasons.push(Reason::RankViolation);
                    detail.push(format!("tensor `{}` {:?} has outer extents > 1", graph.values[v].name, graph.values[v].shape));
                } else if matches!(node.op, Op::Dense { .. }) && graph.values[node.inputs[0]].shape.len() > 1 {
                    reasons.push(Reason::RankViolation);
                    detail.push(format!("fully-connected input {:?} is not a vector", graph.values[node.inputs[0]].shape));
                }
            }
            if policy.require_static_shapes && touched.iter().any(|&v| graph.values[v].shape.contains(&0)) {
                reasons.push(Reason::DynamicShape);
                detail.push("tensor with unknown extent".into());
            }
            if policy.require_int8 {
                if let Some(&v) = touched.iter().find(|&&v| graph.values[v].dtype != DType::I8 || graph.values[v].quant.is_none()) {
                    reasons.push(Reason::NonInt8);
                    detail.push(format!("tensor `{}` is {}", graph.values[v].name, graph.values[v].dtype));
                }
            }
            if graph.input_batch > 1 && node.inputs.iter().any(|v| graph_inputs.contains(v)) {
                reasons.push(Reason::BatchedInput);
                detail.push(format!("input batch {}", graph.input_batch));
            }
            NodeVerdict { node: node.name.clone(), kind, reasons, detail: detail.join("; ") }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub rule: String,
    pub node: String,
    pub replacement: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub graph: ModelGraph,
    pub log: Vec<RewriteRecord>,
    /// Unsupported nodes no rule could fix, with their reasons.
    pub unresolved: Vec<NodeVerdict>,
}

fn new_value(g: &mut ModelGraph, name: String, shape: Vec<usize>, like: ValueId, quant: Option<QuantParams>) -> ValueId {
    let id = g.add_value(name, shape);
    g.values[id].dtype = g.values[like].dtype;
    g.values[id].quant = quant;
    id
}

fn unique_node_name(g: &ModelGraph, base: &str) -> String {
    if g.node_by_name(base).is_none() {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}#{i}")).find(|n| g.node_by_name(n).is_none()).unwrap()
}

fn plain(name: String, group: &str, op: Op, inputs: Vec<ValueId>, output: ValueId) -> Node {
    Node { name, group: group.to_string(), op, inputs, output, params: Vec::new(), aux_quant: Vec::new() }
}

/// `(a − b)²` as SUB followed by MUL.
fn rewrite_squared_difference(g: &mut ModelGraph, idx: usize) -> RewriteRecord {
    let node = g.nodes[idx].clone();
    let (a, b) = (node.inputs[0], node.inputs[1]);
    let quant = match (g.values[a].quant, g.values[b].quant) {
        (Some(qa), Some(qb)) => {
            let ((amin, amax), (bmin, bmax)) = (qa.real_range(), qb.real_range());
            Some(QuantParams::from_range(amin - bmax, amax - bmin))
        }
        _ => None,
    };
    let shape = g.values[node.output].shape.clone();
    let sub_name = unique_node_name(g, &format!("{}/sub", node.name));
    let diff = new_value(g, sub_name.clone(), shape, node.output, quant);
    let mul_name = unique_node_name(g, &format!("{}/mul", node.name));
    let sub = plain(sub_name.clone(), &node.group, Op::Sub, vec![a, b], diff);
    let mul = plain(mul_name.clone(), &node.group, Op::Mul, vec![diff, diff], node.output);
    g.nodes.splice(idx..=idx, [sub, mul]);
    RewriteRecord { rule: "squared_difference_to_sub_mul".into(), node: node.name, replacement: vec![sub_name, mul_name] }
}

/// Row-wise dense on `[.., n, d]` as a 1×1 convolution over `[n, 1, d]`.
fn rewrite_dense_as_conv(g: &mut ModelGraph, idx: usize) -> Result<RewriteRecord, GraphError> {
    let node = g.nodes[idx].clone();
    let Op::Dense { bias } = node.op else { unreachable!() };
    let x = node.inputs[0];
    let in_shape = g.values[x].shape.clone();
    let out_shape = g.values[node.output].shape.clone();
    let d = *in_shape.last().unwrap();
    let rows = in_shape.iter().product::<usize>() / d.max(1);
    let out_d = *out_shape.last().unwrap();

    let in_q = g.values[x].quant;
    let out_q = g.values[node.output].quant;
    let pre_name = unique_node_name(g, &format!("{}/to_map", node.name));
    let pre = new_value(g, pre_name.clone(), vec![rows, 1, d], x, in_q);
    let conv_name = unique_node_name(g, &format!("{}/conv1x1", node.name));
    let conv_out = new_value(g, conv_name.clone(), vec![rows, 1, out_d], node.output, out_q);
    let post_name = unique_node_name(g, &format!("{}/to_rows", node.name));

    let w = g.weight(&node.params[0])?.reshape(vec![1, 1, d, out_d])?;
    let w_name = g.fresh_weight_name(&format!("{}/w", conv_name));
    g.weights.insert(w_name.clone(), w);
    let mut params = vec![w_name];
    if bias {
        let b = g.weight(&node.params[1])?.clone();
        let b_name = g.fresh_weight_name(&format!("{}/b", conv_name));
        g.weights.insert(b_name.clone(), b);
        params.push(b_name);
    }
    let reshape_in = plain(pre_name.clone(), &node.group, Op::Reshape { shape: vec![rows, 1, d] }, vec![x], pre);
    let conv = Node {
        name: conv_name.clone(),
        group: node.group.clone(),
        op: Op::Conv2d { kernel: (1, 1), stride: (1, 1), padding: Padding::Valid, bias },
        inputs: vec![pre],
        output: conv_out,
        params,
        aux_quant: Vec::new(),
    };
    let reshape_out = plain(post_name.clone(), &node.group, Op::Reshape { shape: out_shape }, vec![conv_out], node.output);
    g.nodes.splice(idx..=idx, [reshape_in, conv, reshape_out]);
    Ok(RewriteRecord { rule: "dense_rows_to_conv1x1".into(), node: node.name, replacement: vec![pre_name, conv_name, post_name] })
}

/// Applies rewrite rules until none matches. Unsupported nodes without a
/// rule are listed in [`RewriteOutcome::unresolved`] and left in place.
pub fn rewrite(graph: &ModelGraph, policy: &OpSupportPolicy) -> Result<RewriteOutcome, GraphError> {
    let mut g = graph.clone();
    let mut log = Vec::new();
    loop {
        let verdicts = validate(&g, policy)?;
        let target = verdicts.iter().enumerate().find_map(|(i, v)| {
            if v.supported() {
                return None;
            }
            let node = &g.nodes[i];
            match node.op {
                Op::SquaredDifference
                    if policy.supported_kinds.contains(&LayerKind::Sub) && policy.supported_kinds.contains(&LayerKind::Mul) =>
                {
                    Some((i, true))
                }
                Op::Dense { .. }
                    if v.reasons == [Reason::RankViolation]
                        && g.values[node.inputs[0]].shape.len() > 1
                        && rank_ok(&g.values[node.inputs[0]].shape)
                        && policy.supported_kinds.contains(&LayerKind::Conv2d)
                        && policy.supported_kinds.contains(&LayerKind::Reshape) =>
                {
                    Some((i, false))
                }
                _ => None,
            }
        });
        match target {
            Some((i, true)) => log.push(rewrite_squared_difference(&mut g, i)),
            Some((i, false)) => log.push(rewrite_dense_as_conv(&mut g, i)?),
            None => {
                let unresolved = verdicts.into_iter().filter(|v| !v.supported()).collect();
                g.compact();
                g.check()?;
                return Ok(RewriteOutcome { graph: g, log, unresolved });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Target {
    Accelerator,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub target: Target,
    pub nodes: Vec<String>,
    /// Tensors read by the segment but produced outside it.
    pub inputs: Vec<String>,
    /// Tensors produced in the segment and read after it (or graph outputs).
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub segments: Vec<Segment>,
    pub diagnostics: Vec<NodeVerdict>,
}

impl PartitionPlan {
    pub fn fallback_nodes(&self) -> usize {
        self.segments.iter().filter(|s| s.target == Target::Fallback).map(|s| s.nodes.len()).sum()
    }

    pub fn fully_accelerated(&self) -> bool {
        self.segments.len() == 1 && self.segments[0].target == Target::Accelerator
    }
}

/// Maximal contiguous runs of equally-targeted nodes in graph order.
pub fn partition(graph: &ModelGraph, verdicts: &[NodeVerdict]) -> PartitionPlan {
    let mut runs: Vec<(Target, Vec<usize>)> = Vec::new();
    for (i, v) in verdicts.iter().enumerate().take(graph.nodes.len()) {
        let t = if v.supported() { Target::Accelerator } else { Target::Fallback };
        match runs.last_mut() {
            Some((last, nodes)) if *last == t => nodes.push(i),
            _ => runs.push((t, vec![i])),
        }
    }
    let segment_of: BTreeMap<usize, usize> =
        runs.iter().enumerate().flat_map(|(s, (_, ns))| ns.iter().map(move |&n| (n, s))).collect();
    let producer: BTreeMap<ValueId, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.output, i)).collect();
    let segments = runs
        .iter()
        .enumerate()
        .map(|(s, (target, nodes))| {
            let mut inputs = BTreeSet::new();
            let mut outputs = BTreeSet::new();
            for &i in nodes {
                for &v in &graph.nodes[i].inputs {
                    if producer.get(&v).map_or(true, |p| segment_of[p] != s) {
                        inputs.insert(v);
                    }
                }
                let out = graph.nodes[i].output;
                let read_later = graph.consumers(out).iter().any(|c| segment_of[c] != s);
                if read_later || graph.outputs.contains(&out) {
                    outputs.insert(out);
                }
            }
            let name = |v: ValueId| graph.values[v].name.clone();
            Segment {
                target: *target,
                nodes: nodes.iter().map(|&i| graph.nodes[i].name.clone()).collect(),
                inputs: inputs.into_iter().map(name).collect(),
                outputs: outputs.into_iter().map(name).collect(),
            }
        })
        .collect();
    PartitionPlan { segments, diagnostics: verdicts.to_vec() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub param_bytes: usize,
    pub budget_bytes: usize,
    pub pass: bool,
    pub overage_bytes: usize,
}

pub fn check_budget(graph: &ModelGraph, policy: &OpSupportPolicy) -> BudgetReport {
    let bytes = graph.param_bytes();
    BudgetReport {
        param_bytes: bytes,
        budget_bytes: policy.param_cache_budget_bytes,
        pass: bytes <= policy.param_cache_budget_bytes,
        overage_bytes: bytes.saturating_sub(policy.param_cache_budget_bytes),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub severity: Severity,
    pub node: Option<String>,
    pub reason: Option<Reason>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub model: String,
    pub quantized: bool,
    pub rewrites: Vec<RewriteRecord>,
    pub plan: PartitionPlan,
    pub budget: BudgetReport,
    pub violations: Vec<Violation>,
    pub fully_accelerated: bool,
    pub fallback_nodes: usize,
    pub node_count: usize,
}

impl CompileReport {
    /// Plain-text rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model: {}\nquantized: {}\nnodes: {}\nrewrites: {}\nsegments: {}\nfallback nodes: {}\nfully accelerated: {}\nparameter bytes: {} / {} ({})\n",
            self.model,
            self.quantized,
            self.node_count,
            self.rewrites.len(),
            self.plan.segments.len(),
            self.fallback_nodes,
            self.fully_accelerated,
            self.budget.param_bytes,
            self.budget.budget_bytes,
            if self.budget.pass { "within budget" } else { "over budget" },
        );
        for r in &self.rewrites {
            s += &format!("rewrite {}: {} -> {}\n", r.rule, r.node, r.replacement.join(", "));
        }
        for (i, seg) in self.plan.segments.iter().enumerate() {
            let target = match seg.target {
                Target::Accelerator => "accelerator",
                Target::Fallback => "fallback",
            };
            s += &format!("segment {i}: {target}, {} nodes, in [{}], out [{}]\n", seg.nodes.len(), seg.inputs.join(", "), seg.outputs.join(", "));
        }
        for v in &self.violations {
            let sev = match v.severity {
                Severity::Fatal => "fatal",
                Severity::Warning => "warning",
            };
            s += &format!("{sev}: {}\n", v.message);
        }
        s
    }
}

/// Quantization check, rewrite, validation, partitioning and budget check.
pub fn compile(graph: &ModelGraph, policy: &OpSupportPolicy) -> Result<(ModelGraph, CompileReport), GraphError> {
    let mut violations = Vec::new();
    let quantized = graph.is_quantized();
    if policy.require_int8 && !quantized {
        violations.push(Violation {
            severity: Severity::Fatal,
            node: None,
            reason: Some(Reason::NonInt8),
            message: "graph is not INT8-quantized".into(),
        });
    }
    let outcome = rewrite(graph, policy)?;
    let verdicts = validate(&outcome.graph, policy)?;
    for v in verdicts.iter().filter(|v| !v.supported()) {
        for &r in &v.reasons {
            let severity = if r == Reason::UnknownOp { Severity::Warning } else { Severity::Fatal };
            if severity == Severity::Fatal && r == Reason::NonInt8 && !quantized {
                continue;
            }
            violations.push(Violation {
                severity,
                node: Some(v.node.clone()),
                reason: Some(r),
                message: format!("{} ({}) runs on the fallback path: {}", v.node, r, v.detail),
            });
        }
    }
    let plan = partition(&outcome.graph, &verdicts);
    let budget = check_budget(&outcome.graph, policy);
    if !budget.pass {
        violations.push(Violation {
            severity: Severity::Fatal,
            node: None,
            reason: None,
            message: format!("parameters exceed the cache budget by {} bytes", budget.overage_bytes),
        });
    }
    let report = CompileReport {
        model: format!("{:?}", graph.kind).to_lowercase(),
        quantized,
        rewrites: outcome.log,
        fully_accelerated: plan.fully_accelerated(),
        fallback_nodes: plan.fallback_nodes(),
        node_count: outcome.graph.nodes.len(),
        plan,
        budget,
        violations,
    };
    Ok((outcome.graph, report))
}
