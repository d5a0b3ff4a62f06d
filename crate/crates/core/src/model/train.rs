use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::seed::mix;

/// A preprocessed input and its class label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: MultiBranchInput,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            epochs: 8,
            batch: 16,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Parameter gradients, same layout as [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelParams);

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Backpropagates `d loss / d logits` through the whole network and adds the
/// parameter gradients into `grads`.
fn backward(
    params: &ModelParams,
    graph: &SkeletonGraph,
    trace: &ForwardTrace,
    acts: &Activations,
    dlogits: &[f64],
    grads: &mut ModelParams,
) {
    let (t_len, tp_len, v_len) = (acts.frames, acts.pooled, acts.joints);
    let positions = tp_len * v_len;

    // head
    let mut dgap = [0.0; FEATURE_CHANNELS];
    for (c, &dl) in dlogits.iter().enumerate() {
        grads.head_b[c] += dl;
        for n in 0..FEATURE_CHANNELS {
            grads.head_w[c * FEATURE_CHANNELS + n] += dl * trace.gap_vector[n];
            dgap[n] += dl * params.head_w[c * FEATURE_CHANNELS + n];
        }
    }

    // GAP + ReLU of the fused block
    let inv = 1.0 / positions as f64;
    let mut dfuse_pre = vec![0.0; positions * FEATURE_CHANNELS];
    for r in 0..positions {
        for n in 0..FEATURE_CHANNELS {
            if acts.fuse_pre[r * FEATURE_CHANNELS + n] > 0.0 {
                dfuse_pre[r * FEATURE_CHANNELS + n] = dgap[n] * inv;
            }
        }
    }

    // fused dense
    let mut dfuse_agg = vec![0.0; positions * CONCAT_CHANNELS];
    for r in 0..positions {
        let dz = &dfuse_pre[r * FEATURE_CHANNELS..(r + 1) * FEATURE_CHANNELS];
        for (n, &d) in dz.iter().enumerate() {
            grads.fuse_b[n] += d;
        }
        for i in 0..CONCAT_CHANNELS {
            let x = acts.fuse_agg[r * CONCAT_CHANNELS + i];
            let w = &params.fuse_w[i * FEATURE_CHANNELS..(i + 1) * FEATURE_CHANNELS];
            let gw = &mut grads.fuse_w[i * FEATURE_CHANNELS..(i + 1) * FEATURE_CHANNELS];
            let mut acc = 0.0;
            for n in 0..FEATURE_CHANNELS {
                gw[n] += x * dz[n];
                acc += dz[n] * w[n];
            }
            dfuse_agg[r * CONCAT_CHANNELS + i] = acc;
        }
    }
    // adjacency is symmetric, so the transpose uses the same neighbor lists
    let dconcat = graph_aggregate(graph, &dfuse_agg, tp_len, CONCAT_CHANNELS);

    let ch = BRANCH_CHANNELS;
    for bi in 0..BRANCHES {
        let p = &params.branches[bi];
        let a = &acts.branch[bi];
        let g = &mut grads.branches[bi];

        let mut dpre2 = vec![0.0; positions * ch];
        for r in 0..positions {
            for o in 0..ch {
                if a.pre2[r * ch + o] > 0.0 {
                    dpre2[r * ch + o] = dconcat[r * CONCAT_CHANNELS + bi * ch + o];
                }
            }
        }

        let mut dhidden = vec![0.0; t_len * v_len * ch];
        for tp in 0..tp_len {
            for v in 0..v_len {
                let dz = &dpre2[(tp * v_len + v) * ch..(tp * v_len + v + 1) * ch];
                for (o, &d) in dz.iter().enumerate() {
                    g.tc_b[o] += d;
                }
                for k in 0..TEMPORAL_KERNEL {
                    let s = tp * TEMPORAL_STRIDE + k;
                    if s < TEMPORAL_PAD || s - TEMPORAL_PAD >= t_len {
                        continue;
                    }
                    let src = ((s - TEMPORAL_PAD) * v_len + v) * ch;
                    for i in 0..ch {
                        let h = a.hidden[src + i];
                        let off = (k * ch + i) * ch;
                        let mut acc = 0.0;
                        for o in 0..ch {
                            g.tc_w[off + o] += h * dz[o];
                            acc += dz[o] * p.tc_w[off + o];
                        }
                        dhidden[src + i] += acc;
                    }
                }
            }
        }

        for r in 0..t_len * v_len {
            for o in 0..ch {
                let d = if a.pre1[r * ch + o] > 0.0 {
                    dhidden[r * ch + o]
                } else {
                    0.0
                };
                if d == 0.0 {
                    continue;
                }
                g.gc_b[o] += d;
                for c in 0..IN_CHANNELS {
                    g.gc_w[c * ch + o] += a.agg[r * IN_CHANNELS + c] * d;
                }
            }
        }
    }
}

/// Mean cross-entropy and its gradient over `batch`, plus the number of
/// correct predictions. Samples are accumulated in slice order.
pub fn batch_gradient(
    params: &ModelParams,
    graph: &SkeletonGraph,
    batch: &[&Sample],
) -> Result<(f64, Gradients, usize)> {
    let mut grads = ModelParams::zeros(params.classes);
    let mut loss = 0.0;
    let mut correct = 0;
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        if s.label >= params.classes {
            return Err(Error::Config(format!(
                "label {} out of range for {} classes",
                s.label, params.classes
            )));
        }
        let (trace, acts) = forward_with_activations(params, &s.input, graph)?;
        loss += cross_entropy(&trace.logits, s.label) * scale;
        if trace.predicted_class == s.label {
            correct += 1;
        }
        let mut dlogits: Vec<f64> = trace.probs.iter().map(|p| p * scale).collect();
        dlogits[s.label] -= scale;
        backward(params, graph, &trace, &acts, &dlogits, &mut grads);
    }
    Ok((loss, Gradients(grads), correct))
}

fn accuracy(params: &ModelParams, graph: &SkeletonGraph, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for s in samples {
        if forward(params, &s.input, graph)?.predicted_class == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Minibatch SGD with momentum and L2 weight decay on the weight matrices.
/// The learning rate follows a cosine decay to zero over all steps.
pub fn train(
    dataset: &[Sample],
    validation: &[Sample],
    classes: usize,
    graph: &SkeletonGraph,
    hp: &TrainHyperparams,
    seed: u64,
) -> Result<TrainedModel> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if hp.batch == 0 || hp.epochs == 0 || !(hp.lr > 0.0) {
        return Err(Error::Config(format!("invalid hyperparameters {hp:?}")));
    }
    let mut params = ModelParams::init(classes, mix(&[seed, 0x1417]))?;
    params.fit_input_norm(dataset.iter().map(|s| &s.input));
    let mut velocity = ModelParams::zeros(classes);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let steps_per_epoch = dataset.len().div_ceil(hp.batch);
    let total_steps = (steps_per_epoch * hp.epochs) as f64;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xe90c, epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(hp.batch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, Gradients(grads), ok) = batch_gradient(&params, graph, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss is {loss} at epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            correct += ok;

            let lr = hp.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            step += 1;
            let layout = tensor_layout(classes);
            for (((p, g), m), (name, _)) in params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(velocity.tensors_mut())
                .zip(&layout)
            {
                let decay = if name.ends_with("_w") { hp.weight_decay } else { 0.0 };
                for ((pi, gi), mi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()) {
                    *mi = hp.momentum * *mi + gi + decay * *pi;
                    *pi -= lr * *mi;
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Training(format!("non-finite parameters after epoch {epoch}")));
        }
        let validation_accuracy = if validation.is_empty() {
            None
        } else {
            Some(accuracy(&params, graph, validation)?)
        };
        history.push(EpochStats {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            validation_accuracy,
        });
    }
    Ok(TrainedModel { params, history })
}
