//! Faithfulness and stability of joint attributions.
//!
//! Faithfulness perturbs the raw joint coordinates of the top-k (PGI) or the
//! remaining (PGU) joints, reruns preprocessing and the model, and averages
//! the absolute change of the predicted-class probability over `N` draws.
//! Values over the k grid are reduced to one number by a normalized
//! trapezoid.
//!
//! Stability compares the explanation of an input with the explanation of
//! perturbed copies that keep the same predicted class:
//!
//! ```text
//! ratio = ||(e - e') / max(|e|, eps)||_p / max(||(x - x') / max(|x|, eps)||_p, eps)
//! ```
//!
//! with `x` one input branch (RIS), the class probabilities (ROS) or the
//! logits (RRS). The maximum over admissible draws is reported.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{top_k, Attribution, Explainer, Method};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardTrace, ModelParams};
use crate::perturbation::{perturb, PerturbationSpec};
use crate::skeleton::{preprocess, MultiBranchInput, SkeletonGraph, SkeletonSequence};

pub const DEFAULT_K_GRID: [usize; 8] = [1, 2, 3, 5, 8, 12, 18, 25];

/// Trained parameters together with the graph they run on.
#[derive(Debug, Clone, Copy)]
pub struct Classifier<'a> {
    pub params: &'a ModelParams,
    pub graph: &'a SkeletonGraph,
}

impl<'a> Classifier<'a> {
    pub fn new(params: &'a ModelParams, graph: &'a SkeletonGraph) -> Self {
        Self { params, graph }
    }

    pub fn run(&self, seq: &SkeletonSequence) -> Result<(MultiBranchInput, ForwardTrace)> {
        let x = preprocess(seq, self.graph)?;
        let trace = forward(self.params, &x, self.graph)?;
        Ok((x, trace))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaithfulnessConfig {
    pub k_grid: Vec<usize>,
    pub radius_m: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            k_grid: DEFAULT_K_GRID.to_vec(),
            radius_m: 0.025,
            samples: 10,
            seed: 0,
        }
    }
}

impl FaithfulnessConfig {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.k_grid.len() < 2 {
            return Err(Error::Config("k_grid needs at least 2 values".into()));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "k_grid must be strictly ascending, got {:?}",
                self.k_grid
            )));
        }
        if self.k_grid[0] < 1 || *self.k_grid.last().unwrap() > joints {
            return Err(Error::Config(format!(
                "k_grid values must lie in 1..={joints}, got {:?}",
                self.k_grid
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("faithfulness samples must be >= 1".into()));
        }
        if !(self.radius_m >= 0.0 && self.radius_m.is_finite()) {
            return Err(Error::Config(format!("invalid radius {}", self.radius_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub p: f64,
    pub eps_min: f64,
    pub radius_m: f64,
    pub samples: usize,
    pub seed: u64,
    /// Compare per-joint means instead of min-max normalized scores.
    pub use_raw_scores: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            eps_min: 1e-6,
            radius_m: 0.025,
            samples: 10,
            seed: 0,
            use_raw_scores: false,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(Error::Config(format!("norm order p must be >= 1, got {}", self.p)));
        }
        if !(self.eps_min > 0.0 && self.eps_min.is_finite()) {
            return Err(Error::Config(format!("eps_min must be > 0, got {}", self.eps_min)));
        }
        if self.samples == 0 {
            return Err(Error::Config("stability samples must be >= 1".into()));
        }
        if !(self.radius_m >= 0.0 && self.radius_m.is_finite()) {
            return Err(Error::Config(format!("invalid radius {}", self.radius_m)));
        }
        Ok(())
    }
}

/// Normalized trapezoid: the integral over `k` divided by `k_max - k_min`.
pub fn auc_over_k(values: &[f64], k_grid: &[usize]) -> Result<f64> {
    if values.len() != k_grid.len() {
        return Err(Error::Config(format!(
            "{} values for {} grid points",
            values.len(),
            k_grid.len()
        )));
    }
    if k_grid.len() < 2 {
        return Err(Error::Config("AUC needs at least 2 grid points".into()));
    }
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("k grid must be strictly ascending".into()));
    }
    let mut area = 0.0;
    for i in 1..k_grid.len() {
        area += (k_grid[i] - k_grid[i - 1]) as f64 * (values[i] + values[i - 1]) / 2.0;
    }
    Ok(area / (k_grid[k_grid.len() - 1] - k_grid[0]) as f64)
}

/// `||v||_p`; `p = inf` gives the max norm.
pub fn norm_p(v: &[f64], p: f64) -> f64 {
    if p == f64::INFINITY {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else if p == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Elementwise `(a - b) / max(|a|, eps)`.
pub fn relative_change(a: &[f64], b: &[f64], eps: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "relative change of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y) / x.abs().max(eps)).collect())
}

/// One stability ratio with its parts. `denominator` is the norm before the
/// `eps_min` floor; `floored` is set when the floor was applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioTerm {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub floored: bool,
}

pub fn stability_ratio(
    e: &[f64],
    e_prime: &[f64],
    x: &[f64],
    x_prime: &[f64],
    cfg: &StabilityConfig,
) -> Result<RatioTerm> {
    let numerator = norm_p(&relative_change(e, e_prime, cfg.eps_min)?, cfg.p);
    let denominator = norm_p(&relative_change(x, x_prime, cfg.eps_min)?, cfg.p);
    let floored = denominator < cfg.eps_min;
    Ok(RatioTerm {
        value: numerator / denominator.max(cfg.eps_min),
        numerator,
        denominator,
        floored,
    })
}

/// Relative input stability for one branch.
pub fn ris(e: &[f64], e2: &[f64], branch: &[f64], branch2: &[f64], cfg: &StabilityConfig) -> Result<f64> {
    stability_ratio(e, e2, branch, branch2, cfg).map(|t| t.value)
}

/// Relative output stability on class probabilities.
pub fn ros(e: &[f64], e2: &[f64], probs: &[f64], probs2: &[f64], cfg: &StabilityConfig) -> Result<f64> {
    stability_ratio(e, e2, probs, probs2, cfg).map(|t| t.value)
}

/// Relative representation stability on the logits.
pub fn rrs(e: &[f64], e2: &[f64], logits: &[f64], logits2: &[f64], cfg: &StabilityConfig) -> Result<f64> {
    stability_ratio(e, e2, logits, logits2, cfg).map(|t| t.value)
}

/// Expected prediction gap for perturbations of one sample, memoized by
/// target set. Offsets depend only on `(seed, draw, joint)`, so two
/// attributions that select the same joints see identical perturbations.
pub struct PredictionGap<'a> {
    model: Classifier<'a>,
    seq: &'a SkeletonSequence,
    class_id: usize,
    base_prob: f64,
    radius_m: f64,
    samples: usize,
    seed: u64,
    cache: HashMap<Vec<usize>, f64>,
}

impl<'a> PredictionGap<'a> {
    pub fn new(
        model: Classifier<'a>,
        seq: &'a SkeletonSequence,
        base: &ForwardTrace,
        cfg: &FaithfulnessConfig,
    ) -> Self {
        let class_id = base.predicted_class;
        Self {
            model,
            seq,
            class_id,
            base_prob: base.probs[class_id],
            radius_m: cfg.radius_m,
            samples: cfg.samples,
            seed: cfg.seed,
            cache: HashMap::new(),
        }
    }

    /// Mean of `|f(X)[c] - f(X')[c]|` with `targets` perturbed.
    pub fn gap(&mut self, targets: &[usize]) -> Result<f64> {
        if targets.is_empty() {
            return Ok(0.0);
        }
        let mut key = targets.to_vec();
        key.sort_unstable();
        if let Some(&g) = self.cache.get(&key) {
            return Ok(g);
        }
        let spec = PerturbationSpec::new(self.radius_m, key.clone(), self.seed, self.samples)?;
        let mut total = 0.0;
        for draw in 0..self.samples {
            let (_, trace) = self.model.run(&perturb(self.seq, &spec, draw)?)?;
            total += (self.base_prob - trace.probs[self.class_id]).abs();
        }
        let g = total / self.samples as f64;
        self.cache.insert(key, g);
        Ok(g)
    }

    pub fn scores(&mut self, attr: &Attribution, k_grid: &[usize]) -> Result<(FaithfulnessScore, FaithfulnessScore)> {
        let mut important = Vec::with_capacity(k_grid.len());
        let mut unimportant = Vec::with_capacity(k_grid.len());
        for &k in k_grid {
            let (top, rest) = top_k(attr, k)?;
            important.push(self.gap(&top)?);
            unimportant.push(self.gap(&rest)?);
        }
        Ok((
            FaithfulnessScore::new(important, k_grid)?,
            FaithfulnessScore::new(unimportant, k_grid)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessScore {
    pub per_k: Vec<f64>,
    pub auc: f64,
}

impl FaithfulnessScore {
    fn new(per_k: Vec<f64>, k_grid: &[usize]) -> Result<Self> {
        let auc = auc_over_k(&per_k, k_grid)?;
        Ok(Self { per_k, auc })
    }
}

/// PGI and PGU of `attr` on `seq`, sharing forward passes between the two.
pub fn faithfulness(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    attr: &Attribution,
    cfg: &FaithfulnessConfig,
) -> Result<(FaithfulnessScore, FaithfulnessScore)> {
    cfg.validate(seq.joints())?;
    let (_, base) = model.run(seq)?;
    PredictionGap::new(model, seq, &base, cfg).scores(attr, &cfg.k_grid)
}

pub fn pgi(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    attr: &Attribution,
    cfg: &FaithfulnessConfig,
) -> Result<FaithfulnessScore> {
    faithfulness(model, seq, attr, cfg).map(|(i, _)| i)
}

pub fn pgu(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    attr: &Attribution,
    cfg: &FaithfulnessConfig,
) -> Result<FaithfulnessScore> {
    faithfulness(model, seq, attr, cfg).map(|(_, u)| u)
}

/// Largest ratio over the admissible draws and the draw that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxTerm {
    pub draw: usize,
    #[serde(flatten)]
    pub term: RatioTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScores {
    pub ris_joint: MaxTerm,
    pub ris_velocity: MaxTerm,
    pub ris_bone: MaxTerm,
    pub ros: MaxTerm,
    pub rrs: MaxTerm,
    pub admissible: usize,
    pub draws: usize,
}

impl StabilityScores {
    pub fn values(&self) -> [f64; 5] {
        [
            self.ris_joint.term.value,
            self.ris_velocity.term.value,
            self.ris_bone.term.value,
            self.ros.term.value,
            self.rrs.term.value,
        ]
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum StabilityOutcome {
    Scored(StabilityScores),
    /// No perturbed draw kept the predicted class.
    Excluded { draws: usize },
}

impl StabilityOutcome {
    pub fn scores(&self) -> Option<&StabilityScores> {
        match self {
            StabilityOutcome::Scored(s) => Some(s),
            StabilityOutcome::Excluded { .. } => None,
        }
    }
}

fn keep_max(slot: &mut Option<MaxTerm>, draw: usize, term: RatioTerm) {
    if slot.is_none_or(|m| term.value > m.term.value) {
        *slot = Some(MaxTerm { draw, term });
    }
}

/// Stability of several explainers on the same perturbed neighborhood of
/// `seq`. Every joint is perturbed; draws that change the predicted class
/// are skipped.
pub fn stability_sweep_many(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    explainers: &[Explainer],
    cfg: &StabilityConfig,
) -> Result<Vec<StabilityOutcome>> {
    cfg.validate()?;
    let (x, base) = model.run(seq)?;
    let class_id = base.predicted_class;
    let originals = explainers
        .iter()
        .map(|ex| ex.explain(model.params, &base, class_id, None))
        .collect::<Result<Vec<_>>>()?;
    let spec = PerturbationSpec::new(cfg.radius_m, (0..seq.joints()).collect(), cfg.seed, cfg.samples)?;

    let mut best: Vec<[Option<MaxTerm>; 5]> = vec![[None; 5]; explainers.len()];
    let mut admissible = 0;
    for draw in 0..cfg.samples {
        let (x2, trace) = model.run(&perturb(seq, &spec, draw)?)?;
        if trace.predicted_class != class_id {
            continue;
        }
        admissible += 1;
        for ((ex, e0), slots) in explainers.iter().zip(&originals).zip(&mut best) {
            let e1 = ex.explain(model.params, &trace, class_id, Some(draw))?;
            let (a, b) = (e0.scores(cfg.use_raw_scores), e1.scores(cfg.use_raw_scores));
            for (slot, (bx, bx2)) in slots.iter_mut().zip(x.branches().into_iter().zip(x2.branches())) {
                keep_max(slot, draw, stability_ratio(a, b, bx, bx2, cfg)?);
            }
            keep_max(&mut slots[3], draw, stability_ratio(a, b, &base.probs, &trace.probs, cfg)?);
            keep_max(&mut slots[4], draw, stability_ratio(a, b, &base.logits, &trace.logits, cfg)?);
        }
    }
    Ok(best
        .into_iter()
        .map(|slots| match slots {
            [Some(j), Some(v), Some(b), Some(o), Some(r)] => StabilityOutcome::Scored(StabilityScores {
                ris_joint: j,
                ris_velocity: v,
                ris_bone: b,
                ros: o,
                rrs: r,
                admissible,
                draws: cfg.samples,
            }),
            _ => StabilityOutcome::Excluded { draws: cfg.samples },
        })
        .collect())
}

pub fn stability_sweep(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    explainer: Explainer,
    cfg: &StabilityConfig,
) -> Result<StabilityOutcome> {
    let mut out = stability_sweep_many(model, seq, &[explainer], cfg)?;
    Ok(out.remove(0))
}

/// Mean and 95% normal-approximation half-width, `1.96 s / sqrt(n)` with the
/// sample standard deviation `s`. Empty input gives NaN; one value gives a
/// zero half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub halfwidth: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            halfwidth: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let halfwidth = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    };
    Summary { mean, halfwidth, n }
}

pub const METRIC_NAMES: [&str; 7] = ["PGI", "PGU", "RISj", "RISv", "RISb", "ROS", "RRS"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: usize,
    pub method: Method,
    pub radius_cm: f64,
    /// In [`METRIC_NAMES`] order.
    pub metrics: [Summary; 7],
    pub n_samples: usize,
    /// Samples with at least one admissible stability draw.
    pub n_stability: usize,
    pub n_excluded: usize,
    pub n_degenerate: usize,
}

impl ReportRow {
    pub fn metric(&self, name: &str) -> Option<Summary> {
        METRIC_NAMES.iter().position(|&m| m == name).map(|i| self.metrics[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
}

impl MetricReport {
    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = vec!["class".into(), "method".into(), "radius_cm".into()];
        for m in METRIC_NAMES {
            h.push(format!("{m}_mean"));
            h.push(format!("{m}_halfwidth"));
        }
        h.extend(["n_samples", "n_stability", "n_excluded", "n_degenerate"].map(String::from));
        h
    }

    pub fn row(&self, class: usize, method: Method, radius_cm: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.method == method && r.radius_cm == radius_cm)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(Self::header())?;
        for r in &self.rows {
            let mut rec = vec![r.class.to_string(), r.method.to_string(), r.radius_cm.to_string()];
            for s in &r.metrics {
                rec.push(s.mean.to_string());
                rec.push(s.halfwidth.to_string());
            }
            rec.extend([r.n_samples, r.n_stability, r.n_excluded, r.n_degenerate].map(|n| n.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{cam, random_attribution};
    use crate::skeleton::{build_ntu_graph, synth::synth_generate};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn auc_examples() {
        assert!(close(auc_over_k(&[0.7; 8], &DEFAULT_K_GRID).unwrap(), 0.7, 1e-12));
        assert_eq!(auc_over_k(&[0.0, 1.0], &[1, 25]).unwrap(), 0.5);
        assert_eq!(auc_over_k(&[1.0, 3.0, 5.0], &[1, 2, 3]).unwrap(), 3.0);
        assert!(matches!(auc_over_k(&[1.0], &[1]), Err(Error::Config(_))));
        assert!(auc_over_k(&[1.0, 2.0], &[3, 3]).is_err());
        assert!(auc_over_k(&[1.0, 2.0, 3.0], &[1, 2]).is_err());
    }

    /// Trapezoid written as a weighted sum of the samples.
    fn auc_oracle(v: &[f64], k: &[usize]) -> f64 {
        let n = v.len();
        let mut s = 0.0;
        for i in 0..n {
            let left = if i > 0 { (k[i] - k[i - 1]) as f64 } else { 0.0 };
            let right = if i + 1 < n { (k[i + 1] - k[i]) as f64 } else { 0.0 };
            s += v[i] * (left + right) / 2.0;
        }
        s / (k[n - 1] - k[0]) as f64
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change(&[1.0, 1.0], &[1.0, 1.0], 1e-6).unwrap(), vec![0.0, 0.0]);
        assert_eq!(relative_change(&[1.0, 1.0], &[1.0, 2.0], 1e-6).unwrap(), vec![0.0, -1.0]);
        let r = relative_change(&[0.0, 2.0], &[0.5, 1.0], 1e-6).unwrap();
        assert_eq!(r, vec![-0.5 / 1e-6, 0.5]);
        assert!(relative_change(&[1.0], &[1.0, 2.0], 1e-6).is_err());
    }

    #[test]
    fn ratio_examples() {
        let cfg = StabilityConfig::default();
        let (e, e2) = ([1.0, 1.0], [1.0, 2.0]);
        assert!(close(ris(&e, &e2, &[1.0], &[0.9], &cfg).unwrap(), 10.0, 1e-12));
        assert_eq!(ris(&e, &e, &[1.0], &[0.9], &cfg).unwrap(), 0.0);
        let untouched = ris(&e, &e2, &[0.3, 0.4], &[0.3, 0.4], &cfg).unwrap();
        assert_eq!(untouched, 1.0 / 1e-6);
        // probs rel-change [0.5, 0] has norm 0.5
        assert!(close(ros(&e, &e2, &[0.8, 0.2], &[0.4, 0.2], &cfg).unwrap(), 2.0, 1e-12));
        assert_eq!(ros(&e, &e2, &[0.8, 0.2], &[0.8, 0.2], &cfg).unwrap(), 1e6);
        // numerator norm 2, logits rel-change norm 0.4
        assert!(close(rrs(&e, &[1.0, 3.0], &[5.0, 1.0], &[3.0, 1.0], &cfg).unwrap(), 5.0, 1e-12));
        assert_eq!(rrs(&e, &[1.0, 3.0], &[5.0], &[5.0], &cfg).unwrap(), 2e6);
        assert!(ros(&e, &e2, &[1.0], &[1.0, 2.0], &cfg).is_err());

        let t = stability_ratio(&e, &e2, &[2.0], &[2.0], &cfg).unwrap();
        assert!(t.floored);
        assert_eq!((t.numerator, t.denominator), (1.0, 0.0));
    }

    #[test]
    fn ratio_scales_inversely_with_denominator() {
        let cfg = StabilityConfig::default();
        let e = [0.2, 0.9, 1.0];
        let e2 = [0.3, 0.7, 1.0];
        let a = ris(&e, &e2, &[1.0, 1.0], &[1.1, 1.0], &cfg).unwrap();
        let b = ris(&e, &e2, &[1.0, 1.0], &[1.2, 1.0], &cfg).unwrap();
        assert!(close(a, 2.0 * b, 1e-12));
    }

    #[test]
    fn norms() {
        let v = [3.0, -4.0];
        assert_eq!(norm_p(&v, 2.0), 5.0);
        assert_eq!(norm_p(&v, 1.0), 7.0);
        assert_eq!(norm_p(&v, f64::INFINITY), 4.0);
        assert!(close(norm_p(&v, 3.0), (27.0f64 + 64.0).powf(1.0 / 3.0), 1e-15));
    }

    #[test]
    fn config_validation() {
        assert!(FaithfulnessConfig::default().validate(25).is_ok());
        assert!(FaithfulnessConfig::default().validate(20).is_err());
        let bad = |k: Vec<usize>| FaithfulnessConfig { k_grid: k, ..Default::default() }.validate(25);
        assert!(bad(vec![3]).is_err());
        assert!(bad(vec![0, 3]).is_err());
        assert!(bad(vec![3, 2]).is_err());
        assert!(StabilityConfig::default().validate().is_ok());
        assert!(StabilityConfig { p: 0.5, ..Default::default() }.validate().is_err());
        assert!(StabilityConfig { eps_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(StabilityConfig { samples: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn summary_interval() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!(close(s.halfwidth, 1.96 * sd / 2.0, 1e-15));
        assert_eq!(summarize(&[7.0]).halfwidth, 0.0);
        assert!(summarize(&[]).mean.is_nan());
    }

    fn setup(seed: u64) -> (ModelParams, SkeletonGraph, SkeletonSequence) {
        let g = build_ntu_graph();
        let p = ModelParams::init(4, seed).unwrap();
        let s = synth_generate(0, seed, 16, 0.005).unwrap();
        (p, g, s)
    }

    #[test]
    fn constant_model_has_zero_gaps() {
        let (_, g, s) = setup(1);
        let mut p = ModelParams::zeros(4);
        p.head_b = vec![0.1, 0.5, -0.2, 0.0];
        let model = Classifier::new(&p, &g);
        let attr = random_attribution(25, 8, 3).unwrap();
        let cfg = FaithfulnessConfig {
            radius_m: 0.4,
            ..Default::default()
        };
        let (i, u) = faithfulness(model, &s, &attr, &cfg).unwrap();
        assert!(i.per_k.iter().chain(&u.per_k).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_radius_and_full_k() {
        let (p, g, s) = setup(2);
        let model = Classifier::new(&p, &g);
        let (_, trace) = model.run(&s).unwrap();
        let attr = cam(&trace, &p, trace.predicted_class).unwrap();
        let zero = FaithfulnessConfig {
            radius_m: 0.0,
            ..Default::default()
        };
        let (i, u) = faithfulness(model, &s, &attr, &zero).unwrap();
        assert!(i.per_k.iter().chain(&u.per_k).all(|&x| x == 0.0));

        let cfg = FaithfulnessConfig {
            radius_m: 0.1,
            ..Default::default()
        };
        let (i, u) = faithfulness(model, &s, &attr, &cfg).unwrap();
        assert_eq!(*u.per_k.last().unwrap(), 0.0);
        assert!(i.per_k.iter().all(|&x| x > 0.0));
        assert!(i.auc > 0.0 && u.auc >= 0.0);
    }

    #[test]
    fn gap_matches_direct_loop() {
        let (p, g, s) = setup(3);
        let model = Classifier::new(&p, &g);
        let (_, base) = model.run(&s).unwrap();
        let cfg = FaithfulnessConfig {
            radius_m: 0.05,
            samples: 4,
            seed: 12,
            ..Default::default()
        };
        let targets = vec![9, 3, 20];
        let mut pg = PredictionGap::new(model, &s, &base, &cfg);
        let got = pg.gap(&targets).unwrap();
        let c = base.predicted_class;
        let spec = PerturbationSpec::new(0.05, targets, 12, 4).unwrap();
        let mut want = 0.0;
        for d in 0..4 {
            let x = preprocess(&perturb(&s, &spec, d).unwrap(), &g).unwrap();
            want += (base.probs[c] - forward(&p, &x, &g).unwrap().probs[c]).abs() / 4.0;
        }
        assert!(close(got, want, 1e-12));
        assert_eq!(pg.gap(&[20, 9, 3]).unwrap(), got);
    }

    #[test]
    fn sweep_at_zero_radius() {
        let (p, g, s) = setup(4);
        let model = Classifier::new(&p, &g);
        let cfg = StabilityConfig {
            radius_m: 0.0,
            ..Default::default()
        };
        for m in [Method::Cam, Method::GradCam] {
            let out = stability_sweep(model, &s, Explainer::new(m, 1), &cfg).unwrap();
            let sc = out.scores().unwrap();
            assert_eq!(sc.admissible, cfg.samples);
            assert_eq!(sc.values(), [0.0; 5]);
        }
    }

    #[test]
    fn sweep_matches_manual_max() {
        let (p, g, s) = setup(5);
        let model = Classifier::new(&p, &g);
        let cfg = StabilityConfig {
            radius_m: 0.03,
            samples: 5,
            seed: 8,
            ..Default::default()
        };
        let explainers = [Explainer::new(Method::Cam, 2), Explainer::new(Method::Random, 2)];
        let outs = stability_sweep_many(model, &s, &explainers, &cfg).unwrap();
        let (x, base) = model.run(&s).unwrap();
        let c = base.predicted_class;
        let spec = PerturbationSpec::new(0.03, (0..25).collect(), 8, 5).unwrap();
        for (ex, out) in explainers.iter().zip(&outs) {
            let e = ex.explain(&p, &base, c, None).unwrap();
            let mut maxima = [f64::NEG_INFINITY; 5];
            let mut n = 0;
            for d in 0..5 {
                let (x2, t2) = model.run(&perturb(&s, &spec, d).unwrap()).unwrap();
                if t2.predicted_class != c {
                    continue;
                }
                n += 1;
                let e2 = ex.explain(&p, &t2, c, Some(d)).unwrap();
                let v = [
                    ris(&e.normalized, &e2.normalized, &x.joint, &x2.joint, &cfg).unwrap(),
                    ris(&e.normalized, &e2.normalized, &x.velocity, &x2.velocity, &cfg).unwrap(),
                    ris(&e.normalized, &e2.normalized, &x.bone, &x2.bone, &cfg).unwrap(),
                    ros(&e.normalized, &e2.normalized, &base.probs, &t2.probs, &cfg).unwrap(),
                    rrs(&e.normalized, &e2.normalized, &base.logits, &t2.logits, &cfg).unwrap(),
                ];
                for (m, vi) in maxima.iter_mut().zip(v) {
                    *m = m.max(vi);
                }
            }
            match out {
                StabilityOutcome::Scored(sc) => {
                    assert_eq!(sc.admissible, n);
                    assert_eq!(sc.values(), maxima);
                }
                StabilityOutcome::Excluded { draws } => {
                    assert_eq!(n, 0);
                    assert_eq!(*draws, 5);
                }
            }
        }
    }

    #[test]
    fn sweep_bookkeeping_at_large_radius() {
        let (p, g, s) = setup(6);
        let model = Classifier::new(&p, &g);
        let cfg = StabilityConfig {
            radius_m: 50.0,
            samples: 3,
            ..Default::default()
        };
        let out = stability_sweep(model, &s, Explainer::new(Method::Cam, 0), &cfg).unwrap();
        match out {
            StabilityOutcome::Scored(sc) => assert!(sc.admissible >= 1 && sc.admissible <= 3),
            StabilityOutcome::Excluded { draws } => assert_eq!(draws, 3),
        }
    }

    #[test]
    fn report_csv_layout() {
        let s = summarize(&[1.0, 2.0]);
        let report = MetricReport {
            rows: vec![ReportRow {
                class: 3,
                method: Method::GradCam,
                radius_cm: 2.5,
                metrics: [s; 7],
                n_samples: 2,
                n_stability: 2,
                n_excluded: 0,
                n_degenerate: 0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "class,method,radius_cm,PGI_mean,PGI_halfwidth,PGU_mean,PGU_halfwidth,RISj_mean,RISj_halfwidth,\
             RISv_mean,RISv_halfwidth,RISb_mean,RISb_halfwidth,ROS_mean,ROS_halfwidth,RRS_mean,RRS_halfwidth,\
             n_samples,n_stability,n_excluded,n_degenerate"
        );
        assert!(lines.next().unwrap().starts_with("3,gradcam,2.5,1.5,"));
        assert_eq!(report.row(3, Method::GradCam, 2.5).unwrap().metric("ROS"), Some(s));
    }

    /// Independent ratio: explicit loops, powf for every p.
    fn ratio_oracle(e: &[f64], e2: &[f64], x: &[f64], x2: &[f64], p: f64, eps: f64) -> f64 {
        let mut num = 0.0;
        for i in 0..e.len() {
            let d = if e[i].abs() > eps { e[i].abs() } else { eps };
            num += ((e[i] - e2[i]) / d).abs().powf(p);
        }
        let mut den = 0.0;
        for i in 0..x.len() {
            let d = if x[i].abs() > eps { x[i].abs() } else { eps };
            den += ((x[i] - x2[i]) / d).abs().powf(p);
        }
        let (num, den) = (num.powf(1.0 / p), den.powf(1.0 / p));
        num / if den > eps { den } else { eps }
    }

    proptest! {
        #[test]
        fn auc_matches_oracle(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut k: Vec<usize> = (1..=25).collect();
            while k.len() > n {
                let i = rng.random_range(0..k.len());
                k.remove(i);
            }
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = auc_over_k(&v, &k).unwrap();
            prop_assert!((got - auc_oracle(&v, &k)).abs() <= 1e-12);
        }

        #[test]
        fn ratios_match_oracle(
            seed in any::<u64>(),
            p in prop::sample::select(vec![1.0, 2.0, 3.0]),
            zeros in 0usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let mut e = vec(25);
            let e2 = vec(25);
            for z in e.iter_mut().take(zeros) {
                *z = 0.0;
            }
            let x = vec(60);
            let x2: Vec<f64> = x.iter().zip(vec(60)).map(|(a, b)| a + 0.01 * b).collect();
            let cfg = StabilityConfig { p, ..Default::default() };
            let want = ratio_oracle(&e, &e2, &x, &x2, p, cfg.eps_min);
            for got in [
                ris(&e, &e2, &x, &x2, &cfg).unwrap(),
                ros(&e, &e2, &x, &x2, &cfg).unwrap(),
                rrs(&e, &e2, &x, &x2, &cfg).unwrap(),
            ] {
                prop_assert!(close(got, want, 1e-12), "{} vs {}", got, want);
                prop_assert!(got >= 0.0);
            }
            let rc = relative_change(&e, &e2, cfg.eps_min).unwrap();
            for i in 0..25 {
                let d = if e[i].abs() > cfg.eps_min { e[i].abs() } else { cfg.eps_min };
                prop_assert!(close(rc[i], (e[i] - e2[i]) / d, 1e-12));
            }
        }
    }
}
