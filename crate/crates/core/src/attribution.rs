//! CAM, Grad-CAM and random joint attributions.
//!
//! Every method produces a `T' x V` raw map, which is averaged over frames
//! into one score per joint, min-max normalized to `[0, 1]`, and ranked
//! (descending score, ties by ascending joint index).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_featuremaps, ForwardTrace, ModelParams};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cam,
    GradCam,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cam, Method::GradCam, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cam => "cam",
            Method::GradCam => "gradcam",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cam" => Ok(Method::Cam),
            "gradcam" => Ok(Method::GradCam),
            "random" => Ok(Method::Random),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (expected cam, gradcam or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub method: Method,
    /// `T'`
    pub frames: usize,
    /// `[t'][v]`
    pub raw: Vec<f64>,
    pub per_joint: Vec<f64>,
    pub normalized: Vec<f64>,
    pub ranking: Vec<usize>,
    /// Set when `per_joint` is constant and `normalized` is all zeros.
    pub degenerate: bool,
}

impl Attribution {
    /// Builds the per-joint scores, normalization and ranking from a raw map.
    pub fn from_raw(method: Method, frames: usize, joints: usize, raw: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 || raw.len() != frames * joints {
            return Err(Error::Attr(format!(
                "raw map of {} values does not fit {frames} x {joints}",
                raw.len()
            )));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::Attr("raw attribution map is not finite".into()));
        }
        let per_joint: Vec<f64> = (0..joints)
            .map(|v| (0..frames).map(|t| raw[t * joints + v]).sum::<f64>() / frames as f64)
            .collect();
        let (normalized, degenerate) = normalize(&per_joint);
        let ranking = rank(&per_joint);
        Ok(Self {
            method,
            frames,
            raw,
            per_joint,
            normalized,
            ranking,
            degenerate,
        })
    }

    pub fn joints(&self) -> usize {
        self.per_joint.len()
    }

    /// Scores fed to the stability metrics.
    pub fn scores(&self, use_raw: bool) -> &[f64] {
        if use_raw {
            &self.per_joint
        } else {
            &self.normalized
        }
    }

    pub fn export(&self, sample_id: &str, class_id: usize) -> AttributionExport {
        AttributionExport {
            sample_id: sample_id.to_string(),
            method: self.method,
            class_id,
            per_joint: self.per_joint.clone(),
            ranking: self.ranking.clone(),
        }
    }
}

/// Min-max normalization to `[0, 1]`. A constant input maps to all zeros and
/// the second return value is `true`.
pub fn normalize(x: &[f64]) -> (Vec<f64>, bool) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if x.is_empty() || !(span > 0.0) {
        return (vec![0.0; x.len()], true);
    }
    let out = x
        .iter()
        .map(|&v| if v == hi { 1.0 } else { ((v - lo) / span).clamp(0.0, 1.0) })
        .collect();
    (out, false)
}

/// Joint indices by descending score, ties by ascending index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn weighted_map(trace: &ForwardTrace, weights: &[f64]) -> Vec<f64> {
    let positions = trace.frames * trace.joints;
    let mut raw = vec![0.0; positions];
    for (n, &w) in weights.iter().enumerate() {
        let f = &trace.feature_maps[n * positions..(n + 1) * positions];
        for (r, &x) in raw.iter_mut().zip(f) {
            *r += w * x;
        }
    }
    raw
}

fn check_trace(trace: &ForwardTrace, params: &ModelParams, class_id: usize) -> Result<()> {
    if class_id >= params.classes {
        return Err(Error::Attr(format!(
            "class {class_id} out of range for {} classes",
            params.classes
        )));
    }
    if trace.feature_maps.len() != trace.channels * trace.frames * trace.joints {
        return Err(Error::Attr("feature maps do not match trace shape".into()));
    }
    Ok(())
}

/// `raw[t, v] = sum_n W[class, n] F[n, t, v]`.
pub fn cam(trace: &ForwardTrace, params: &ModelParams, class_id: usize) -> Result<Attribution> {
    check_trace(trace, params, class_id)?;
    let w = params.class_weights(class_id)?;
    if w.len() != trace.channels {
        return Err(Error::Attr(format!(
            "classifier has {} channels, trace has {}",
            w.len(),
            trace.channels
        )));
    }
    let raw = weighted_map(trace, w);
    Attribution::from_raw(Method::Cam, trace.frames, trace.joints, raw)
}

/// Channel weights are the mean gradient of the class logit over each
/// feature map. With `rectify` the weighted map is passed through ReLU.
pub fn gradcam(
    trace: &ForwardTrace,
    params: &ModelParams,
    class_id: usize,
    rectify: bool,
) -> Result<Attribution> {
    check_trace(trace, params, class_id)?;
    let grads = grad_featuremaps(params, trace, class_id).map_err(|e| Error::Attr(e.to_string()))?;
    let positions = trace.frames * trace.joints;
    let alpha: Vec<f64> = grads
        .chunks_exact(positions)
        .map(|g| g.iter().sum::<f64>() / positions as f64)
        .collect();
    let mut raw = weighted_map(trace, &alpha);
    if rectify {
        for r in &mut raw {
            *r = r.max(0.0);
        }
    }
    Attribution::from_raw(Method::GradCam, trace.frames, trace.joints, raw)
}

/// i.i.d. `U[0, 1)` joint scores, repeated over `frames` rows.
pub fn random_attribution(joints: usize, frames: usize, seed: u64) -> Result<Attribution> {
    if joints == 0 {
        return Err(Error::Attr("random attribution needs at least one joint".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..joints).map(|_| rng.random::<f64>()).collect();
    let frames = frames.max(1);
    let raw = (0..frames).flat_map(|_| scores.iter().copied()).collect();
    Attribution::from_raw(Method::Random, frames, joints, raw)
}

/// A method plus the settings needed to rerun it on perturbed inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Explainer {
    pub method: Method,
    pub rectify: bool,
    /// Base seed of the random baseline.
    pub random_seed: u64,
}

impl Explainer {
    pub fn new(method: Method, random_seed: u64) -> Self {
        Self {
            method,
            rectify: false,
            random_seed,
        }
    }

    /// Explains `class_id` from a forward trace. `draw` is `None` for the
    /// original input and `Some(i)` for the i-th perturbed copy; the random
    /// baseline draws fresh scores for every input it is asked about.
    pub fn explain(
        &self,
        params: &ModelParams,
        trace: &ForwardTrace,
        class_id: usize,
        draw: Option<usize>,
    ) -> Result<Attribution> {
        match self.method {
            Method::Cam => cam(trace, params, class_id),
            Method::GradCam => gradcam(trace, params, class_id, self.rectify),
            Method::Random => {
                let seed = match draw {
                    None => self.random_seed,
                    Some(i) => mix(&[self.random_seed, i as u64 + 1]),
                };
                random_attribution(trace.joints, trace.frames, seed)
            }
        }
    }
}

/// Splits the ranking into the top `k` joints and the rest.
pub fn top_k(attr: &Attribution, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let v = attr.ranking.len();
    if k > v {
        return Err(Error::Range { k, max: v });
    }
    Ok((attr.ranking[..k].to_vec(), attr.ranking[k..].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionExport {
    pub sample_id: String,
    pub method: Method,
    pub class_id: usize,
    pub per_joint: Vec<f64>,
    pub ranking: Vec<usize>,
}

impl AttributionExport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, FEATURE_CHANNELS};
    use crate::skeleton::{build_ntu_graph, preprocess, synth::synth_generate};
    use proptest::prelude::*;

    fn fixture_trace(channels: usize, frames: usize, joints: usize, maps: Vec<f64>) -> ForwardTrace {
        ForwardTrace {
            channels,
            frames,
            joints,
            feature_maps: maps,
            gap_vector: vec![0.0; channels],
            logits: vec![0.0; 2],
            probs: vec![0.5; 2],
            predicted_class: 0,
        }
    }

    fn params_with_head(rows: &[[f64; 2]]) -> ModelParams {
        let mut p = ModelParams::zeros(rows.len());
        p.head_w = vec![0.0; rows.len() * FEATURE_CHANNELS];
        for (c, r) in rows.iter().enumerate() {
            p.head_w[c * FEATURE_CHANNELS] = r[0];
            p.head_w[c * FEATURE_CHANNELS + 1] = r[1];
        }
        p
    }

    fn padded_maps(two: &[f64]) -> Vec<f64> {
        let mut m = two.to_vec();
        m.resize(two.len() / 2 * FEATURE_CHANNELS, 0.0);
        m
    }

    #[test]
    fn two_channel_hand_fixture() {
        // 2 frames x 3 joints, channels 0 and 1
        let f0 = [1.0, 2.0, 0.0, 3.0, -1.0, 4.0];
        let f1 = [0.5, 0.0, 2.0, -1.0, 1.0, 1.0];
        let maps = padded_maps(&[f0, f1].concat());
        let trace = fixture_trace(FEATURE_CHANNELS, 2, 3, maps);
        let p = params_with_head(&[[2.0, -1.0], [0.0, 0.0]]);
        let a = cam(&trace, &p, 0).unwrap();
        // 2*f0 - f1
        assert_eq!(a.raw, vec![1.5, 4.0, -2.0, 7.0, -3.0, 7.0]);
        assert_eq!(a.per_joint, vec![4.25, 0.5, 2.5]);
        assert_eq!(a.ranking, vec![0, 2, 1]);
        assert!((a.normalized[2] - 2.0 / 3.75).abs() < 1e-15);
        assert_eq!((a.normalized[0], a.normalized[1]), (1.0, 0.0));
        assert_eq!(a.method, Method::Cam);
        assert!(!a.degenerate);

        let z = cam(&trace, &p, 1).unwrap();
        assert!(z.raw.iter().all(|&x| x == 0.0));
        assert_eq!(z.normalized, vec![0.0; 3]);
        assert!(z.degenerate);
        assert!(matches!(cam(&trace, &p, 2), Err(Error::Attr(_))));
    }

    #[test]
    fn single_channel_identity() {
        let f0 = [0.3, 0.1, 0.7, 0.2];
        let trace = fixture_trace(FEATURE_CHANNELS, 2, 2, padded_maps(&[f0, [9.0; 4]].concat()));
        let p = params_with_head(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(cam(&trace, &p, 0).unwrap().raw, f0.to_vec());
    }

    #[test]
    fn gradcam_is_scaled_cam() {
        let g = build_ntu_graph();
        let p = ModelParams::init(4, 3).unwrap();
        let x = preprocess(&synth_generate(1, 5, 20, 0.005).unwrap(), &g).unwrap();
        let trace = forward(&p, &x, &g).unwrap();
        for c in 0..4 {
            let a = cam(&trace, &p, c).unwrap();
            let b = gradcam(&trace, &p, c, false).unwrap();
            let scale = 1.0 / (trace.frames * trace.joints) as f64;
            for (ra, rb) in a.raw.iter().zip(&b.raw) {
                assert!((ra * scale - rb).abs() <= 1e-12 * ra.abs().max(1e-300));
            }
            assert_eq!(a.ranking, b.ranking);
            assert_eq!(b.method, Method::GradCam);
        }
        let mut zero = p.clone();
        zero.head_w.iter_mut().for_each(|w| *w = 0.0);
        assert!(gradcam(&trace, &zero, 0, false).unwrap().raw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rectified_gradcam_is_nonnegative() {
        let g = build_ntu_graph();
        let p = ModelParams::init(3, 8).unwrap();
        let x = preprocess(&synth_generate(0, 1, 12, 0.005).unwrap(), &g).unwrap();
        let trace = forward(&p, &x, &g).unwrap();
        let a = gradcam(&trace, &p, 1, true).unwrap();
        assert!(a.raw.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn random_is_deterministic_permutation() {
        let a = random_attribution(25, 4, 17).unwrap();
        let b = random_attribution(25, 4, 17).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..25).collect::<Vec<_>>());
        assert_ne!(a.ranking, random_attribution(25, 4, 18).unwrap().ranking);
        assert_eq!(&a.raw[..25], &a.raw[75..]);
        assert!(a.per_joint.iter().all(|s| (0.0..1.0).contains(s)));
        assert!(random_attribution(0, 1, 0).is_err());
    }

    #[test]
    fn random_top1_is_uniform() {
        let draws = 10_000;
        let mut counts = [0usize; 25];
        for s in 0..draws {
            counts[random_attribution(25, 1, s).unwrap().ranking[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 25.0).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn top_k_splits_ranking() {
        let a = Attribution::from_raw(Method::Random, 1, 3, vec![0.1, 0.9, 0.5]).unwrap();
        let (top, rest) = top_k(&a, 2).unwrap();
        assert_eq!(top, vec![1, 2]);
        assert_eq!(rest, vec![0]);
        assert_eq!(top_k(&a, 0).unwrap(), (vec![], vec![1, 2, 0]));
        assert_eq!(top_k(&a, 3).unwrap(), (vec![1, 2, 0], vec![]));
        assert!(matches!(top_k(&a, 4), Err(Error::Range { k: 4, max: 3 })));
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(rank(&[1.0, 2.0, 2.0, 1.0, 3.0]), vec![4, 1, 2, 0, 3]);
        assert_eq!(rank(&[0.0; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn from_raw_rejects_bad_maps() {
        assert!(Attribution::from_raw(Method::Cam, 2, 2, vec![0.0; 3]).is_err());
        assert!(Attribution::from_raw(Method::Cam, 1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn explainer_dispatch() {
        let g = build_ntu_graph();
        let p = ModelParams::init(3, 2).unwrap();
        let x = preprocess(&synth_generate(2, 9, 10, 0.005).unwrap(), &g).unwrap();
        let trace = forward(&p, &x, &g).unwrap();
        for m in Method::ALL {
            let a = Explainer::new(m, 5).explain(&p, &trace, 1, None).unwrap();
            assert_eq!(a.method, m);
        }
        let r = Explainer::new(Method::Random, 5);
        let a0 = r.explain(&p, &trace, 1, None).unwrap();
        assert_eq!(a0, random_attribution(25, trace.frames, 5).unwrap());
        assert_ne!(a0.per_joint, r.explain(&p, &trace, 1, Some(0)).unwrap().per_joint);
        let c = Explainer::new(Method::Cam, 5);
        assert_eq!(c.explain(&p, &trace, 1, Some(3)).unwrap(), cam(&trace, &p, 1).unwrap());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Grad-CAM".parse::<Method>().unwrap(), Method::GradCam);
        assert!("lime".parse::<Method>().is_err());
    }

    #[test]
    fn export_round_trip() {
        let a = random_attribution(25, 2, 4).unwrap();
        let e = a.export("s0", 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        e.write_json(&path).unwrap();
        let back = AttributionExport::read_json(&path).unwrap();
        assert_eq!(back, e);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"method\": \"random\""));
    }

    proptest! {
        #[test]
        fn normalize_properties(x in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let (n, degenerate) = normalize(&x);
            prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
            let (nn, _) = normalize(&n);
            prop_assert_eq!(&nn, &n);
            if degenerate {
                prop_assert!(n.iter().all(|&v| v == 0.0));
            } else {
                prop_assert_eq!(n.iter().copied().fold(0.0, f64::max), 1.0);
                prop_assert_eq!(n.iter().copied().fold(1.0, f64::min), 0.0);
            }
            let r = rank(&x);
            for w in r.windows(2) {
                prop_assert!(x[w[0]] > x[w[1]] || (x[w[0]] == x[w[1]] && w[0] < w[1]));
            }
        }
    }
}
