//! Three-branch spatiotemporal GCN classifier.
//!
//! ```text
//! joint ─┐  graph-conv 3→8, ReLU, temporal conv k5/s2 8→8, ReLU ─┐
//! vel   ─┼─ (same, separate weights)                             ├─ concat 24 ─ graph-conv 24→16, ReLU ─ F
//! bone  ─┘  (same, separate weights)                             ┘
//! F (16 x T' x V) ─ GAP ─ linear 16→C ─ logits ─ softmax
//! ```
//!
//! Each branch is first standardized per axis with a fixed shift and scale
//! fitted on the training set (identity for a freshly initialized model).
//! `T' = ceil(T / 2)`; joints are never pooled. Graph convolutions aggregate
//! with the normalized adjacency `D^-1/2 (A + I) D^-1/2`. Temporal
//! convolutions zero-pad two frames on each side.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::skeleton::{MultiBranchInput, SkeletonGraph};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorRecord, FORMAT_VERSION};
pub use train::{
    batch_gradient, cross_entropy, train, EpochStats, Gradients, Sample, TrainHyperparams,
    TrainedModel,
};

pub const IN_CHANNELS: usize = 3;
pub const BRANCH_CHANNELS: usize = 8;
pub const BRANCHES: usize = 3;
pub const CONCAT_CHANNELS: usize = BRANCHES * BRANCH_CHANNELS;
pub const FEATURE_CHANNELS: usize = 16;
pub const TEMPORAL_KERNEL: usize = 5;
pub const TEMPORAL_STRIDE: usize = 2;
pub const TEMPORAL_PAD: usize = 2;

/// Output length of the strided temporal convolution.
pub fn pooled_frames(frames: usize) -> usize {
    (frames + 2 * TEMPORAL_PAD - TEMPORAL_KERNEL) / TEMPORAL_STRIDE + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    /// `[in][out]`, 3 x 8
    pub gc_w: Vec<f64>,
    pub gc_b: Vec<f64>,
    /// `[k][in][out]`, 5 x 8 x 8
    pub tc_w: Vec<f64>,
    pub tc_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub classes: usize,
    /// Input standardization, `[branch][axis]`, not trained by SGD.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub branches: [BranchParams; BRANCHES],
    /// `[in][out]`, 24 x 16
    pub fuse_w: Vec<f64>,
    pub fuse_b: Vec<f64>,
    /// Classifier `W`, `[class][channel]`, C x 16.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Name and shape of every parameter tensor, in storage order.
pub fn tensor_layout(classes: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for b in ["joint", "velocity", "bone"] {
        out.push((format!("{b}.gc_w"), vec![IN_CHANNELS, BRANCH_CHANNELS]));
        out.push((format!("{b}.gc_b"), vec![BRANCH_CHANNELS]));
        out.push((
            format!("{b}.tc_w"),
            vec![TEMPORAL_KERNEL, BRANCH_CHANNELS, BRANCH_CHANNELS],
        ));
        out.push((format!("{b}.tc_b"), vec![BRANCH_CHANNELS]));
    }
    out.push(("fuse_w".into(), vec![CONCAT_CHANNELS, FEATURE_CHANNELS]));
    out.push(("fuse_b".into(), vec![FEATURE_CHANNELS]));
    out.push(("head_w".into(), vec![classes, FEATURE_CHANNELS]));
    out.push(("head_b".into(), vec![classes]));
    out
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ModelParams {
    pub fn zeros(classes: usize) -> Self {
        let branch = || BranchParams {
            gc_w: vec![0.0; IN_CHANNELS * BRANCH_CHANNELS],
            gc_b: vec![0.0; BRANCH_CHANNELS],
            tc_w: vec![0.0; TEMPORAL_KERNEL * BRANCH_CHANNELS * BRANCH_CHANNELS],
            tc_b: vec![0.0; BRANCH_CHANNELS],
        };
        Self {
            classes,
            input_shift: vec![0.0; BRANCHES * IN_CHANNELS],
            input_scale: vec![1.0; BRANCHES * IN_CHANNELS],
            branches: [branch(), branch(), branch()],
            fuse_w: vec![0.0; CONCAT_CHANNELS * FEATURE_CHANNELS],
            fuse_b: vec![0.0; FEATURE_CHANNELS],
            head_w: vec![0.0; classes * FEATURE_CHANNELS],
            head_b: vec![0.0; classes],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(classes);
        for b in &mut p.branches {
            b.gc_w = he_uniform(&mut rng, IN_CHANNELS, b.gc_w.len());
            b.tc_w = he_uniform(&mut rng, TEMPORAL_KERNEL * BRANCH_CHANNELS, b.tc_w.len());
        }
        p.fuse_w = he_uniform(&mut rng, CONCAT_CHANNELS, p.fuse_w.len());
        p.head_w = he_uniform(&mut rng, FEATURE_CHANNELS, p.head_w.len());
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::with_capacity(16);
        for b in &self.branches {
            out.extend([&b.gc_w, &b.gc_b, &b.tc_w, &b.tc_b]);
        }
        out.extend([&self.fuse_w, &self.fuse_b, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(16);
        for b in &mut self.branches {
            out.push(&mut b.gc_w);
            out.push(&mut b.gc_b);
            out.push(&mut b.tc_w);
            out.push(&mut b.tc_b);
        }
        out.push(&mut self.fuse_w);
        out.push(&mut self.fuse_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
            && self.input_shift.iter().all(|x| x.is_finite())
            && self.input_scale.iter().all(|x| x.is_finite() && *x > 0.0)
    }

    /// Fits the input standardization to the per-branch, per-axis mean and
    /// standard deviation over every frame and joint of `inputs`.
    pub fn fit_input_norm<'a>(&mut self, inputs: impl IntoIterator<Item = &'a MultiBranchInput>) {
        let mut count = 0.0;
        let mut sum = [0.0; BRANCHES * IN_CHANNELS];
        let mut sq = [0.0; BRANCHES * IN_CHANNELS];
        for x in inputs {
            for (b, data) in x.branches().into_iter().enumerate() {
                for p in data.chunks_exact(IN_CHANNELS) {
                    for (c, &v) in p.iter().enumerate() {
                        sum[b * IN_CHANNELS + c] += v;
                        sq[b * IN_CHANNELS + c] += v * v;
                    }
                }
            }
            count += (x.frames * x.joints) as f64;
        }
        if count == 0.0 {
            return;
        }
        for i in 0..BRANCHES * IN_CHANNELS {
            let mean = sum[i] / count;
            let std = (sq[i] / count - mean * mean).max(0.0).sqrt();
            self.input_shift[i] = mean;
            self.input_scale[i] = if std > 1e-9 { std } else { 1.0 };
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Row `class` of the classifier matrix.
    pub fn class_weights(&self, class: usize) -> Result<&[f64]> {
        if class >= self.classes {
            return Err(Error::Model(format!(
                "class {class} out of range for {} classes",
                self.classes
            )));
        }
        Ok(&self.head_w[class * FEATURE_CHANNELS..(class + 1) * FEATURE_CHANNELS])
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for ((name, shape), t) in tensor_layout(self.classes).iter().zip(self.tensors()) {
            let want: usize = shape.iter().product();
            if t.len() != want {
                return Err(Error::Model(format!(
                    "{name}: expected {want} values, found {}",
                    t.len()
                )));
            }
        }
        if self.input_shift.len() != BRANCHES * IN_CHANNELS
            || self.input_scale.len() != BRANCHES * IN_CHANNELS
        {
            return Err(Error::Model("input normalization must be 3 x 3".into()));
        }
        Ok(())
    }
}

/// Values captured from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub channels: usize,
    /// `T'`
    pub frames: usize,
    pub joints: usize,
    /// Last feature maps before GAP, `[channel][t'][v]`.
    pub feature_maps: Vec<f64>,
    pub gap_vector: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted_class: usize,
}

impl ForwardTrace {
    pub fn feature(&self, n: usize, t: usize, v: usize) -> f64 {
        self.feature_maps[(n * self.frames + t) * self.joints + v]
    }
}

/// Intermediate tensors kept for backpropagation, all `[t][v][ch]`.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub frames: usize,
    pub pooled: usize,
    pub joints: usize,
    pub branch: [BranchActivations; BRANCHES],
    pub fuse_agg: Vec<f64>,
    pub fuse_pre: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BranchActivations {
    pub agg: Vec<f64>,
    pub pre1: Vec<f64>,
    pub hidden: Vec<f64>,
    pub pre2: Vec<f64>,
}

/// `out[t][v][c] = sum_u A[v][u] x[t][u][c]`.
pub(crate) fn graph_aggregate(
    graph: &SkeletonGraph,
    x: &[f64],
    frames: usize,
    channels: usize,
) -> Vec<f64> {
    let v_len = graph.node_count();
    let mut out = vec![0.0; frames * v_len * channels];
    for t in 0..frames {
        let base = t * v_len * channels;
        for v in 0..v_len {
            let dst = base + v * channels;
            for &(u, a) in graph.neighbors(v) {
                let src = base + u * channels;
                for c in 0..channels {
                    out[dst + c] += a * x[src + c];
                }
            }
        }
    }
    out
}

/// `out[r][o] = sum_i x[r][i] w[i][o] + b[o]` over `rows` rows.
fn dense(x: &[f64], w: &[f64], b: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cout);
    for r in 0..rows {
        let xr = &x[r * cin..(r + 1) * cin];
        let start = out.len();
        out.extend_from_slice(b);
        let acc = &mut out[start..start + cout];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * cout..(i + 1) * cout];
            for (a, &wv) in acc.iter_mut().zip(wi) {
                *a += xi * wv;
            }
        }
    }
    out
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Strided temporal convolution per joint, `[t][v][i] -> [t'][v][o]`.
fn temporal_conv(
    h: &[f64],
    w: &[f64],
    b: &[f64],
    frames: usize,
    pooled: usize,
    joints: usize,
) -> Vec<f64> {
    let ch = BRANCH_CHANNELS;
    let mut out = vec![0.0; pooled * joints * ch];
    for tp in 0..pooled {
        for v in 0..joints {
            let dst = (tp * joints + v) * ch;
            out[dst..dst + ch].copy_from_slice(b);
            for k in 0..TEMPORAL_KERNEL {
                let s = tp * TEMPORAL_STRIDE + k;
                if s < TEMPORAL_PAD || s - TEMPORAL_PAD >= frames {
                    continue;
                }
                let src = ((s - TEMPORAL_PAD) * joints + v) * ch;
                for i in 0..ch {
                    let x = h[src + i];
                    if x == 0.0 {
                        continue;
                    }
                    let wk = &w[(k * ch + i) * ch..(k * ch + i + 1) * ch];
                    for o in 0..ch {
                        out[dst + o] += x * wk[o];
                    }
                }
            }
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// First index of the maximum; ties go to the lower class id.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_input(params: &ModelParams, input: &MultiBranchInput, graph: &SkeletonGraph) -> Result<()> {
    params.validate()?;
    if input.joints != graph.node_count() {
        return Err(Error::Model(format!(
            "input has {} joints, graph has {}",
            input.joints,
            graph.node_count()
        )));
    }
    if input.frames < 1 {
        return Err(Error::Model("input has no frames".into()));
    }
    let n = input.frames * input.joints * IN_CHANNELS;
    for (name, b) in ["joint", "velocity", "bone"].iter().zip(input.branches()) {
        if b.len() != n {
            return Err(Error::Model(format!(
                "{name} branch has {} values, expected {n}",
                b.len()
            )));
        }
    }
    Ok(())
}

pub(crate) fn forward_with_activations(
    params: &ModelParams,
    input: &MultiBranchInput,
    graph: &SkeletonGraph,
) -> Result<(ForwardTrace, Activations)> {
    check_input(params, input, graph)?;
    let (t_len, v_len) = (input.frames, input.joints);
    let tp_len = pooled_frames(t_len);

    let mut branch_acts: [BranchActivations; BRANCHES] = Default::default();
    let mut concat = vec![0.0; tp_len * v_len * CONCAT_CHANNELS];
    for (bi, (x, p)) in input.branches().into_iter().zip(&params.branches).enumerate() {
        let shift = &params.input_shift[bi * IN_CHANNELS..(bi + 1) * IN_CHANNELS];
        let scale = &params.input_scale[bi * IN_CHANNELS..(bi + 1) * IN_CHANNELS];
        let normed: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - shift[i % IN_CHANNELS]) / scale[i % IN_CHANNELS])
            .collect();
        let agg = graph_aggregate(graph, &normed, t_len, IN_CHANNELS);
        let pre1 = dense(&agg, &p.gc_w, &p.gc_b, t_len * v_len, IN_CHANNELS, BRANCH_CHANNELS);
        let hidden = relu(&pre1);
        let pre2 = temporal_conv(&hidden, &p.tc_w, &p.tc_b, t_len, tp_len, v_len);
        for (r, chunk) in pre2.chunks_exact(BRANCH_CHANNELS).enumerate() {
            let dst = r * CONCAT_CHANNELS + bi * BRANCH_CHANNELS;
            for (o, &z) in chunk.iter().enumerate() {
                concat[dst + o] = z.max(0.0);
            }
        }
        branch_acts[bi] = BranchActivations {
            agg,
            pre1,
            hidden,
            pre2,
        };
    }

    let fuse_agg = graph_aggregate(graph, &concat, tp_len, CONCAT_CHANNELS);
    let fuse_pre = dense(
        &fuse_agg,
        &params.fuse_w,
        &params.fuse_b,
        tp_len * v_len,
        CONCAT_CHANNELS,
        FEATURE_CHANNELS,
    );

    let positions = tp_len * v_len;
    let mut feature_maps = vec![0.0; FEATURE_CHANNELS * positions];
    let mut gap_vector = vec![0.0; FEATURE_CHANNELS];
    for (r, chunk) in fuse_pre.chunks_exact(FEATURE_CHANNELS).enumerate() {
        for (n, &z) in chunk.iter().enumerate() {
            feature_maps[n * positions + r] = z.max(0.0);
        }
    }
    for (n, g) in gap_vector.iter_mut().enumerate() {
        *g = feature_maps[n * positions..(n + 1) * positions].iter().sum::<f64>() / positions as f64;
    }
    let logits: Vec<f64> = (0..params.classes)
        .map(|c| {
            let w = &params.head_w[c * FEATURE_CHANNELS..(c + 1) * FEATURE_CHANNELS];
            params.head_b[c] + w.iter().zip(&gap_vector).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let probs = softmax(&logits);
    let predicted_class = argmax(&probs);

    let trace = ForwardTrace {
        channels: FEATURE_CHANNELS,
        frames: tp_len,
        joints: v_len,
        feature_maps,
        gap_vector,
        logits,
        probs,
        predicted_class,
    };
    let acts = Activations {
        frames: t_len,
        pooled: tp_len,
        joints: v_len,
        branch: branch_acts,
        fuse_agg,
        fuse_pre,
    };
    Ok((trace, acts))
}

pub fn forward(
    params: &ModelParams,
    input: &MultiBranchInput,
    graph: &SkeletonGraph,
) -> Result<ForwardTrace> {
    forward_with_activations(params, input, graph).map(|(trace, _)| trace)
}

/// `d logit[class] / d F[n][t'][v]`, laid out like `trace.feature_maps`.
///
/// Only GAP and the linear head sit between `F` and the logits, so every
/// entry of channel `n` equals `W[class][n] / (T' * V)`.
pub fn grad_featuremaps(
    params: &ModelParams,
    trace: &ForwardTrace,
    class_id: usize,
) -> Result<Vec<f64>> {
    let w = params.class_weights(class_id)?;
    if trace.channels != w.len() {
        return Err(Error::Model(format!(
            "trace has {} channels, classifier expects {}",
            trace.channels,
            w.len()
        )));
    }
    let positions = trace.frames * trace.joints;
    // d logit / d gap[n] = W[c][n]; d gap[n] / d F[n][.] = 1 / positions
    let mut grad = Vec::with_capacity(trace.channels * positions);
    for &wn in w {
        grad.extend(std::iter::repeat_n(wn / positions as f64, positions));
    }
    Ok(grad)
}

pub fn predict(
    params: &ModelParams,
    input: &MultiBranchInput,
    graph: &SkeletonGraph,
) -> Result<(usize, Vec<f64>)> {
    let trace = forward(params, input, graph)?;
    Ok((trace.predicted_class, trace.probs))
}
