//! Experiment orchestration: data, model, attribution, metric sweeps over
//! radii and methods, and the report files.
//!
//! Output directory layout:
//!
//! ```text
//! report.csv            one row per (class, method, radius)
//! detail.json           config, per-class accuracy and every per-sample value
//! plotdata/<M>.csv      radius_cm,method,mean,halfwidth pooled over evaluated classes
//! plotdata/class_<c>/<M>.csv   the same for a single class
//! ```
//!
//! Per-sample seeds are `mix([master, stream, fnv(sample_id)])`, one stream
//! each for faithfulness perturbations, stability perturbations and the
//! random baseline, so a sample's numbers do not depend on which other
//! samples are evaluated.

mod config;
mod data;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    ClassFilter, DataConfig, DataSource, ExperimentConfig, ModelConfig, DEFAULT_RADII_CM,
    OUTPUT_DIR_ENV,
};
pub use data::{
    label_count, load_dataset, load_json_dir, load_ntu_dir, load_or_train, split_holdout,
    synthetic_dataset, synthetic_seed, to_samples, training_seed, LoadedModel,
};

use crate::attribution::{Explainer, Method};
use crate::error::{Error, Result};
use crate::metrics::{
    stability_sweep_many, summarize, Classifier, FaithfulnessScore, MetricReport, PredictionGap,
    ReportRow, StabilityOutcome, Summary, METRIC_NAMES,
};
use crate::perturbation::cm_to_m;
use crate::seed::{hash_str, mix};
use crate::skeleton::{build_ntu_graph, SkeletonSequence};

const FAITHFULNESS_STREAM: u64 = 0xfa17;
const STABILITY_STREAM: u64 = 0x57ab;
const RANDOM_STREAM: u64 = 0x7a4d;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSeeds {
    pub faithfulness: u64,
    pub stability: u64,
    pub random: u64,
}

pub fn sample_seeds(master: u64, sample_id: &str) -> SampleSeeds {
    let h = hash_str(sample_id);
    SampleSeeds {
        faithfulness: mix(&[master, FAITHFULNESS_STREAM, h]),
        stability: mix(&[master, STABILITY_STREAM, h]),
        random: mix(&[master, RANDOM_STREAM, h]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAttribution {
    pub method: Method,
    pub per_joint: Vec<f64>,
    pub normalized: Vec<f64>,
    pub ranking: Vec<usize>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub pgi: FaithfulnessScore,
    pub pgu: FaithfulnessScore,
    pub stability: StabilityOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    pub radius_cm: f64,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDetail {
    pub sample_id: String,
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub attributions: Vec<MethodAttribution>,
    pub radii: Vec<RadiusResult>,
}

impl SampleDetail {
    pub fn result(&self, radius_cm: f64, method: Method) -> Option<&MethodResult> {
        self.radii
            .iter()
            .find(|r| r.radius_cm == radius_cm)?
            .methods
            .iter()
            .find(|m| m.method == method)
    }

    pub fn attribution(&self, method: Method) -> Option<&MethodAttribution> {
        self.attributions.iter().find(|a| a.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDetail {
    pub config: ExperimentConfig,
    pub trained: bool,
    pub class_accuracy: Vec<ClassAccuracy>,
    pub evaluated_classes: Vec<usize>,
    pub samples: Vec<SampleDetail>,
}

impl ExperimentDetail {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub detail: ExperimentDetail,
    pub output_dir: PathBuf,
}

/// Attribution, faithfulness and stability of one sample for every method
/// and radius.
pub fn evaluate_sample(
    model: Classifier<'_>,
    seq: &SkeletonSequence,
    cfg: &ExperimentConfig,
) -> Result<SampleDetail> {
    let seeds = sample_seeds(cfg.seed, &seq.sample_id);
    let explainers: Vec<Explainer> = cfg
        .methods
        .iter()
        .map(|&m| Explainer {
            method: m,
            rectify: cfg.gradcam_rectify,
            random_seed: seeds.random,
        })
        .collect();
    let (_, base) = model.run(seq)?;
    let class_id = base.predicted_class;
    let attrs = explainers
        .iter()
        .map(|ex| ex.explain(model.params, &base, class_id, None))
        .collect::<Result<Vec<_>>>()?;

    let mut radii = Vec::with_capacity(cfg.radii_cm.len());
    for &radius_cm in &cfg.radii_cm {
        let mut fcfg = cfg.faithfulness.clone();
        fcfg.radius_m = cm_to_m(radius_cm);
        fcfg.seed = seeds.faithfulness;
        fcfg.validate(seq.joints())?;
        let mut scfg = cfg.stability.clone();
        scfg.radius_m = cm_to_m(radius_cm);
        scfg.seed = seeds.stability;

        let mut gaps = PredictionGap::new(model, seq, &base, &fcfg);
        let stability = stability_sweep_many(model, seq, &explainers, &scfg)?;
        let mut methods = Vec::with_capacity(attrs.len());
        for (attr, stability) in attrs.iter().zip(stability) {
            let (pgi, pgu) = gaps.scores(attr, &fcfg.k_grid)?;
            methods.push(MethodResult {
                method: attr.method,
                pgi,
                pgu,
                stability,
            });
        }
        radii.push(RadiusResult { radius_cm, methods });
    }

    Ok(SampleDetail {
        sample_id: seq.sample_id.clone(),
        label: seq.label,
        predicted: class_id,
        probs: base.probs.clone(),
        logits: base.logits.clone(),
        attributions: attrs
            .iter()
            .map(|a| MethodAttribution {
                method: a.method,
                per_joint: a.per_joint.clone(),
                normalized: a.normalized.clone(),
                ranking: a.ranking.clone(),
                degenerate: a.degenerate,
            })
            .collect(),
        radii,
    })
}

/// Metric summaries over `samples` for one method and radius, together with
/// the sample, stability, exclusion and degenerate counts.
fn summarize_cell(samples: &[&SampleDetail], method: Method, radius_cm: f64) -> ([Summary; 7], [usize; 4]) {
    let mut cols: [Vec<f64>; 7] = Default::default();
    let (mut excluded, mut degenerate) = (0, 0);
    for s in samples {
        if s.attribution(method).is_some_and(|a| a.degenerate) {
            degenerate += 1;
        }
        let Some(r) = s.result(radius_cm, method) else { continue };
        cols[0].push(r.pgi.auc);
        cols[1].push(r.pgu.auc);
        match &r.stability {
            StabilityOutcome::Scored(sc) => {
                for (c, v) in cols[2..].iter_mut().zip(sc.values()) {
                    c.push(v);
                }
            }
            StabilityOutcome::Excluded { .. } => excluded += 1,
        }
    }
    let n_stability = cols[2].len();
    (
        cols.each_ref().map(|c| summarize(c)),
        [samples.len(), n_stability, excluded, degenerate],
    )
}

pub fn aggregate(samples: &[SampleDetail], methods: &[Method], radii_cm: &[f64]) -> MetricReport {
    let mut by_class: BTreeMap<usize, Vec<&SampleDetail>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label).or_default().push(s);
    }
    let mut rows = Vec::new();
    for (&class, group) in &by_class {
        for &method in methods {
            for &radius_cm in radii_cm {
                let (metrics, [n_samples, n_stability, n_excluded, n_degenerate]) =
                    summarize_cell(group, method, radius_cm);
                rows.push(ReportRow {
                    class,
                    method,
                    radius_cm,
                    metrics,
                    n_samples,
                    n_stability,
                    n_excluded,
                    n_degenerate,
                });
            }
        }
    }
    MetricReport { rows }
}

fn write_plotdata(dir: &Path, samples: &[&SampleDetail], methods: &[Method], radii_cm: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cells: Vec<(Method, f64, [Summary; 7])> = methods
        .iter()
        .flat_map(|&m| radii_cm.iter().map(move |&r| (m, r)))
        .map(|(m, r)| (m, r, summarize_cell(samples, m, r).0))
        .collect();
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(["radius_cm", "method", "mean", "halfwidth"])?;
        for (m, r, s) in &cells {
            w.write_record([r.to_string(), m.to_string(), s[i].mean.to_string(), s[i].halfwidth.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_outputs(dir: &Path, report: &MetricReport, detail: &ExperimentDetail) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.write_csv(&dir.join("report.csv"))?;
    let path = dir.join("detail.json");
    let text = serde_json::to_string_pretty(detail)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let cfg = &detail.config;
    let all: Vec<&SampleDetail> = detail.samples.iter().collect();
    write_plotdata(&dir.join("plotdata"), &all, &cfg.methods, &cfg.radii_cm)?;
    for &c in &detail.evaluated_classes {
        let group: Vec<&SampleDetail> = detail.samples.iter().filter(|s| s.label == c).collect();
        write_plotdata(&dir.join("plotdata").join(format!("class_{c}")), &group, &cfg.methods, &cfg.radii_cm)?;
    }
    Ok(())
}

fn select_classes(filter: &ClassFilter, accuracy: &[ClassAccuracy]) -> Result<Vec<usize>> {
    let present: Vec<usize> = accuracy.iter().map(|a| a.class).collect();
    let chosen = match filter {
        ClassFilter::All => present,
        ClassFilter::BestWorst => {
            // ties: best takes the lowest id, worst the highest
            let best = accuracy
                .iter()
                .fold(None::<&ClassAccuracy>, |b, a| match b {
                    Some(b) if b.accuracy >= a.accuracy => Some(b),
                    _ => Some(a),
                });
            let worst = accuracy
                .iter()
                .fold(None::<&ClassAccuracy>, |w, a| match w {
                    Some(w) if w.accuracy < a.accuracy => Some(w),
                    _ => Some(a),
                });
            let mut ids: Vec<usize> = best.into_iter().chain(worst).map(|a| a.class).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
        ClassFilter::Ids(ids) => {
            if let Some(c) = ids.iter().find(|c| !present.contains(c)) {
                return Err(Error::Data(format!("class {c} has no held-out samples")));
            }
            let mut ids = ids.clone();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };
    if chosen.is_empty() {
        return Err(Error::Data("no classes left after filtering".into()));
    }
    Ok(chosen)
}

/// Runs the full sweep and writes `report.csv`, `detail.json` and the plot
/// data into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let graph = build_ntu_graph();
    let data = load_dataset(&cfg.data, cfg.seed)?;
    let classes = match cfg.data.source {
        DataSource::Synthetic => cfg.data.classes,
        _ => label_count(&data).max(2),
    };
    let (train_set, held) = split_holdout(data, cfg.data.holdout);
    if held.is_empty() {
        return Err(Error::Data("no held-out samples to evaluate".into()));
    }
    let loaded = load_or_train(
        &cfg.model.checkpoint,
        cfg.model.train_if_missing,
        &cfg.model.train,
        &train_set,
        &held,
        classes,
        &graph,
        cfg.seed,
    )?;
    let params = loaded.params;
    if let Some(s) = held.iter().find(|s| s.label >= params.classes) {
        return Err(Error::Data(format!(
            "sample {} has label {} but the model has {} classes",
            s.sample_id, s.label, params.classes
        )));
    }
    let model = Classifier::new(&params, &graph);

    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in &held {
        let (_, trace) = model.run(s)?;
        let e = tally.entry(s.label).or_default();
        e.0 += 1;
        e.1 += usize::from(trace.predicted_class == s.label);
    }
    let class_accuracy: Vec<ClassAccuracy> = tally
        .into_iter()
        .map(|(class, (samples, correct))| ClassAccuracy {
            class,
            samples,
            correct,
            accuracy: correct as f64 / samples as f64,
        })
        .collect();
    let evaluated_classes = select_classes(&cfg.class_filter, &class_accuracy)?;

    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut samples = Vec::new();
    for s in &held {
        if !evaluated_classes.contains(&s.label) {
            continue;
        }
        let n = taken.entry(s.label).or_default();
        if cfg.data.max_eval_per_class > 0 && *n >= cfg.data.max_eval_per_class {
            continue;
        }
        *n += 1;
        samples.push(evaluate_sample(model, s, cfg)?);
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples left after class filtering".into()));
    }

    let report = aggregate(&samples, &cfg.methods, &cfg.radii_cm);
    let detail = ExperimentDetail {
        config: cfg.clone(),
        trained: loaded.trained,
        class_accuracy,
        evaluated_classes,
        samples,
    };
    write_outputs(&cfg.output_dir, &report, &detail)?;
    Ok(ExperimentOutcome {
        report,
        detail,
        output_dir: cfg.output_dir.clone(),
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn pm(mean: &str, hw: &str) -> String {
    match (mean.parse::<f64>(), hw.parse::<f64>()) {
        (Ok(m), Ok(h)) if m.is_finite() => format!("{m:.3e}±{h:.1e}"),
        _ => "excluded".into(),
    }
}

/// Text table of `report.csv` followed by the pooled plot-data series, both
/// read back from an output directory.
pub fn render_summary(dir: &Path) -> Result<String> {
    let (header, rows) = read_csv(&dir.join("report.csv"))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("report.csv has no column {name}")))
    };
    let mut out = String::new();
    let _ = write!(out, "{:>5} {:>8} {:>6}", "class", "method", "r_cm");
    for m in METRIC_NAMES {
        let _ = write!(out, " {m:>17}");
    }
    let _ = writeln!(out, " {:>4} {:>4}", "n", "excl");
    let (ci, mi, ri) = (col("class")?, col("method")?, col("radius_cm")?);
    let (ni, ei) = (col("n_samples")?, col("n_excluded")?);
    for row in &rows {
        let _ = write!(out, "{:>5} {:>8} {:>6}", row[ci], row[mi], row[ri]);
        for m in METRIC_NAMES {
            let (a, b) = (col(&format!("{m}_mean"))?, col(&format!("{m}_halfwidth"))?);
            let _ = write!(out, " {:>17}", pm(&row[a], &row[b]));
        }
        let _ = writeln!(out, " {:>4} {:>4}", row[ni], row[ei]);
    }

    for m in METRIC_NAMES {
        let path = dir.join("plotdata").join(format!("{m}.csv"));
        if !path.exists() {
            continue;
        }
        let (_, rows) = read_csv(&path)?;
        let _ = writeln!(out, "\n{m} by radius (cm)");
        let mut series: Vec<(String, Vec<String>)> = Vec::new();
        for row in rows {
            let point = format!("{}:{}", row[0], pm(&row[2], &row[3]));
            match series.iter_mut().find(|(method, _)| *method == row[1]) {
                Some((_, pts)) => pts.push(point),
                None => series.push((row[1].clone(), vec![point])),
            }
        }
        for (method, pts) in series {
            let _ = writeln!(out, "  {method:>8}  {}", pts.join("  "));
        }
    }
    Ok(out)
}
