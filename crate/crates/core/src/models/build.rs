use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{ModelError, EMBEDDING_DIM, EMOTION_FRAMES, KWS_FRAMES, KWS_PREFIX, NUM_MEL};
use crate::datapipe::Emotion;
use crate::graph::{GraphBuilder, ModelGraph, ModelKind, Op, ValueId};
use crate::tensor::{Padding, Tensor};

const BN_EPS: f32 = 1e-3;
const LN_EPS: f32 = 1e-3;

/// Builder wrapper that namespaces node and weight names and fills every
/// parameter with a neutral default (zeros; ones for scales and variances).
struct Net {
    b: GraphBuilder,
    prefix: String,
}

impl Net {
    fn name(&self, n: &str) -> String {
        format!("{}{n}", self.prefix)
    }

    fn op(&mut self, name: &str, group: &str, op: Op, inputs: &[ValueId], params: Vec<(&str, Tensor)>) -> Result<ValueId, ModelError> {
        let full = self.name(name);
        let params = params.into_iter().map(|(p, t)| (format!("{full}/{p}"), t)).collect();
        Ok(self.b.node(&full, group, op, inputs, params)?)
    }

    fn channels(&self, x: ValueId) -> usize {
        *self.b.shape(x).last().unwrap()
    }

    fn depthwise(&mut self, name: &str, group: &str, x: ValueId) -> Result<ValueId, ModelError> {
        let c = self.channels(x);
        let op = Op::DepthwiseConv2d { kernel: (3, 3), stride: (1, 1), padding: Padding::Same, bias: false };
        self.op(name, group, op, &[x], vec![("w", Tensor::zeros(vec![3, 3, c]))])
    }

    fn pointwise(&mut self, name: &str, group: &str, x: ValueId, cout: usize) -> Result<ValueId, ModelError> {
        let cin = self.channels(x);
        let op = Op::Conv2d { kernel: (1, 1), stride: (1, 1), padding: Padding::Same, bias: false };
        self.op(name, group, op, &[x], vec![("w", Tensor::zeros(vec![1, 1, cin, cout]))])
    }

    fn conv(
        &mut self,
        name: &str,
        group: &str,
        x: ValueId,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        cout: usize,
    ) -> Result<ValueId, ModelError> {
        let cin = self.channels(x);
        let op = Op::Conv2d { kernel, stride, padding, bias: true };
        let params = vec![("w", Tensor::zeros(vec![kernel.0, kernel.1, cin, cout])), ("b", Tensor::zeros(vec![cout]))];
        self.op(name, group, op, &[x], params)
    }

    fn batch_norm(&mut self, name: &str, group: &str, x: ValueId) -> Result<ValueId, ModelError> {
        let c = self.channels(x);
        let params = vec![
            ("gamma", Tensor::full(vec![c], 1.0)),
            ("beta", Tensor::zeros(vec![c])),
            ("mean", Tensor::zeros(vec![c])),
            ("var", Tensor::full(vec![c], 1.0)),
        ];
        self.op(name, group, Op::BatchNorm { eps: BN_EPS }, &[x], params)
    }

    fn dense(&mut self, name: &str, group: &str, x: ValueId, out: usize) -> Result<ValueId, ModelError> {
        let inp = self.channels(x);
        let params = vec![("w", Tensor::zeros(vec![inp, out])), ("b", Tensor::zeros(vec![out]))];
        self.op(name, group, Op::Dense { bias: true }, &[x], params)
    }

    fn layer_norm(&mut self, name: &str, group: &str, x: ValueId) -> Result<ValueId, ModelError> {
        let d = self.channels(x);
        let params = vec![("gamma", Tensor::full(vec![d], 1.0)), ("beta", Tensor::zeros(vec![d]))];
        self.op(name, group, Op::LayerNorm { eps: LN_EPS }, &[x], params)
    }

    fn relu6(&mut self, name: &str, group: &str, x: ValueId) -> Result<ValueId, ModelError> {
        self.op(name, group, Op::Relu6, &[x], vec![])
    }

    fn pool(&mut self, name: &str, group: &str, x: ValueId, max: bool, window: (usize, usize)) -> Result<ValueId, ModelError> {
        let op = if max {
            Op::MaxPool2d { window, stride: window, padding: Padding::Valid }
        } else {
            Op::AvgPool2d { window, stride: window, padding: Padding::Valid }
        };
        self.op(name, group, op, &[x], vec![])
    }

    /// Squeeze-and-excitation gate over the channel axis.
    fn squeeze_excite(&mut self, name: &str, group: &str, x: ValueId, reduction: usize) -> Result<ValueId, ModelError> {
        let c = self.channels(x);
        let hidden = (c / reduction).max(1);
        let s = self.op(&format!("{name}/squeeze"), group, Op::GlobalAvgPool, &[x], vec![])?;
        let s = self.dense(&format!("{name}/reduce"), group, s, hidden)?;
        let s = self.relu6(&format!("{name}/reduce_act"), group, s)?;
        let s = self.dense(&format!("{name}/expand"), group, s, c)?;
        let s = self.op(&format!("{name}/gate"), group, Op::Sigmoid, &[s], vec![])?;
        self.op(&format!("{name}/scale"), group, Op::Mul, &[x, s], vec![])
    }

    /// Two depthwise-separable units with a projected shortcut, then SE.
    fn res_ds_se(&mut self, name: &str, group: &str, x: ValueId, c: usize, reduction: usize) -> Result<ValueId, ModelError> {
        let a = self.depthwise(&format!("{name}/dw1"), group, x)?;
        let a = self.pointwise(&format!("{name}/pw1"), group, a, c)?;
        let a = self.batch_norm(&format!("{name}/bn1"), group, a)?;
        let a = self.relu6(&format!("{name}/act1"), group, a)?;
        let a = self.depthwise(&format!("{name}/dw2"), group, a)?;
        let a = self.pointwise(&format!("{name}/pw2"), group, a, c)?;
        let a = self.batch_norm(&format!("{name}/bn2"), group, a)?;
        let s = self.pointwise(&format!("{name}/proj"), group, x, c)?;
        let s = self.batch_norm(&format!("{name}/proj_bn"), group, s)?;
        let y = self.op(&format!("{name}/add"), group, Op::Add, &[a, s], vec![])?;
        let y = self.relu6(&format!("{name}/act"), group, y)?;
        self.squeeze_excite(&format!("{name}/se"), group, y, reduction)
    }

    /// Keyword trunk up to the `2×5×256` pooled map. `group` overrides the
    /// per-stage group names when set.
    fn kws_trunk(&mut self, x: ValueId, reduction: usize, group: Option<&str>) -> Result<ValueId, ModelError> {
        let g = |own: &str| -> String { group.unwrap_or(own).to_string() };
        let y = self.depthwise("stem/dw", &g("stem"), x)?;
        let y = self.pointwise("stem/pw", &g("stem"), y, 32)?;
        let y = self.batch_norm("stem/bn", &g("stem"), y)?;
        let mut y = self.relu6("stem/act", &g("stem"), y)?;
        for (i, c) in [64, 128, 256].into_iter().enumerate() {
            y = self.pool(&format!("maxpool{}", i + 1), &g(&format!("maxpool{}", i + 1)), y, true, (2, 2))?;
            y = self.res_ds_se(&format!("res_se{}", i + 1), &g(&format!("res_se{}", i + 1)), y, c, reduction)?;
        }
        let y = self.pool("maxpool4", &g("maxpool4"), y, true, (2, 2))?;
        self.pool("avgpool", &g("avgpool"), y, false, (1, 6))
    }
}

/// Keyword model: `[32, 490, 1]` dB features in, five per-second class
/// distributions (`[5, num_classes]`) and the 256-d embedding out.
pub fn build_kws_model(num_classes: usize, se_reduction: usize) -> Result<ModelGraph, ModelError> {
    if num_classes == 0 || se_reduction == 0 {
        return Err(ModelError::Config(format!("classes {num_classes}, reduction {se_reduction}")));
    }
    let mut n = Net { b: GraphBuilder::new(ModelKind::Kws), prefix: String::new() };
    let x = n.b.input("features", vec![NUM_MEL, KWS_FRAMES, 1]);
    let pooled = n.kws_trunk(x, se_reduction, None)?;
    let logits = n.conv("head/conv", "head", pooled, (2, 1), (1, 1), Padding::Valid, num_classes)?;
    let probs = n.op("head/softmax", "head", Op::Softmax, &[logits], vec![])?;
    let secs = n.b.shape(probs)[1];
    let probs = n.op("reshape", "reshape", Op::Reshape { shape: vec![secs, num_classes] }, &[probs], vec![])?;
    let emb = n.op("embedding", "embedding", Op::GlobalAvgPool, &[pooled], vec![])?;
    n.b.output(probs);
    n.b.output(emb);
    n.b.set_logits(logits);
    n.b.set_labels(kws_labels(num_classes));
    Ok(n.b.finish()?)
}

/// Placeholder keyword vocabulary: `kw00..`, then UNKNOWN and NEGATIVE.
pub fn kws_labels(num_classes: usize) -> Vec<String> {
    let kw = num_classes.saturating_sub(2);
    let mut v: Vec<String> = (0..kw).map(|i| format!("kw{i:02}")).collect();
    v.extend([crate::datapipe::UNKNOWN_CLASS, crate::datapipe::NEGATIVE_CLASS].into_iter().take(num_classes - kw).map(String::from));
    v
}

fn spec_conv(n: &mut Net, idx: usize, x: ValueId, filters: usize) -> Result<ValueId, ModelError> {
    let g = format!("specconv{idx}");
    let y = n.conv(&format!("{g}/down"), &g, x, (2, 1), (2, 1), Padding::Same, filters)?;
    let y = n.relu6(&format!("{g}/down_act"), &g, y)?;
    let y = n.conv(&format!("{g}/conv"), &g, y, (3, 3), (1, 1), Padding::Same, filters)?;
    n.relu6(&format!("{g}/act"), &g, y)
}

fn transformer_block(n: &mut Net, idx: usize, x: ValueId) -> Result<ValueId, ModelError> {
    let g = format!("transformer{idx}");
    let d = n.channels(x);
    let attn_params = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        .into_iter()
        .map(|p| (p, if p.starts_with('w') { Tensor::zeros(vec![d, d]) } else { Tensor::zeros(vec![d]) }))
        .collect();
    let a = n.op(&format!("{g}/attention"), &g, Op::Attention, &[x], attn_params)?;
    let y = n.op(&format!("{g}/add1"), &g, Op::Add, &[x, a], vec![])?;
    let y = n.layer_norm(&format!("{g}/ln1"), &g, y)?;
    let f = n.dense(&format!("{g}/ffn1"), &g, y, d)?;
    let f = n.relu6(&format!("{g}/ffn_act"), &g, f)?;
    let f = n.dense(&format!("{g}/ffn2"), &g, f, d)?;
    let z = n.op(&format!("{g}/add2"), &g, Op::Add, &[y, f], vec![])?;
    n.layer_norm(&format!("{g}/ln2"), &g, z)
}

/// Late-fusion emotion model: `[32, 498]` dB features in, a distribution
/// over the five emotion classes out. Keyword-branch weights live under the
/// `kws/` prefix with the same names as in [`build_kws_model`].
pub fn build_emotion_model(d_model: usize) -> Result<ModelGraph, ModelError> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(ModelError::Config(format!("d_model must be even and positive, got {d_model}")));
    }
    let mut n = Net { b: GraphBuilder::new(ModelKind::Emotion), prefix: String::new() };
    let x = n.b.input("features", vec![NUM_MEL, EMOTION_FRAMES]);

    let clip = n.op("kw_clip/slice", "kw_clip", Op::Slice { axis: 1, start: 0, len: KWS_FRAMES }, &[x], vec![])?;
    let clip = n.op("kw_clip/expand", "kw_clip", Op::Reshape { shape: vec![NUM_MEL, KWS_FRAMES, 1] }, &[clip], vec![])?;
    n.prefix = KWS_PREFIX.to_string();
    let pooled = n.kws_trunk(clip, super::SE_REDUCTION, Some("kw_embedding"))?;
    let emb = n.op("embedding", "kw_embedding", Op::GlobalAvgPool, &[pooled], vec![])?;
    n.prefix.clear();
    let h1 = n.dense("kw_dense1/dense", "kw_dense1", emb, d_model)?;
    let h1 = n.relu6("kw_dense1/act", "kw_dense1", h1)?;
    let h2 = n.dense("kw_dense2/dense", "kw_dense2", h1, d_model)?;
    let h2 = n.relu6("kw_dense2/act", "kw_dense2", h2)?;
    let kw = n.op("kw_dense2/residual", "kw_dense2", Op::Add, &[h1, h2], vec![])?;

    let t = n.op("spec_transpose/transpose", "spec_transpose", Op::Transpose { perm: vec![1, 0] }, &[x], vec![])?;
    let mut s =
        n.op("spec_transpose/expand", "spec_transpose", Op::Reshape { shape: vec![EMOTION_FRAMES, NUM_MEL, 1] }, &[t], vec![])?;
    for (i, f) in [16, 32, 64, 1].into_iter().enumerate() {
        s = spec_conv(&mut n, i + 1, s, f)?;
    }
    let tokens = n.b.shape(s)[0];
    let s = n.op("specconv4/squeeze", "specconv4", Op::Reshape { shape: vec![tokens, NUM_MEL] }, &[s], vec![])?;
    let s = n.dense("token_proj", "token_proj", s, d_model)?;
    let mut s = n.op("pos_enc", "pos_enc", Op::PosEncoding, &[s], vec![])?;
    for i in 1..=4 {
        s = transformer_block(&mut n, i, s)?;
    }
    let seq = n.op("seq_pool", "seq_pool", Op::GlobalAvgPool, &[s], vec![])?;

    let cat = n.op("concat", "concat", Op::Concat, &[kw, seq], vec![])?;
    let h = n.dense("head_dense/dense", "head_dense", cat, d_model)?;
    let h = n.relu6("head_dense/act", "head_dense", h)?;
    let logits = n.dense("head_out/dense", "head_out", h, Emotion::ALL.len())?;
    let probs = n.op("head_out/softmax", "head_out", Op::Softmax, &[logits], vec![])?;
    n.b.output(probs);
    n.b.set_logits(logits);
    n.b.set_labels(Emotion::ALL.iter().map(|e| e.name().to_string()).collect());
    let g = n.b.finish()?;
    debug_assert_eq!(g.values[emb].shape, [EMBEDDING_DIM]);
    Ok(g)
}
