use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, save_checkpoint, train, EpochStats, ModelParams, Sample, TrainHyperparams,
};
use crate::seed::mix;
use crate::skeleton::synth::{class_count, synth_generate};
use crate::skeleton::{parse_ntu_file, preprocess, SkeletonGraph, SkeletonSequence};

use super::config::{DataConfig, DataSource};

const DATA_STREAM: u64 = 0xda7a;
const TRAIN_STREAM: u64 = 0x7ea1;

/// Generation seed of the `index`-th synthetic sample of `class_id`.
pub fn synthetic_seed(master: u64, class_id: usize, index: usize) -> u64 {
    mix(&[master, DATA_STREAM, class_id as u64, index as u64])
}

/// Training seed derived from the master seed.
pub fn training_seed(master: u64) -> u64 {
    mix(&[master, TRAIN_STREAM])
}

/// `per_class` samples of each of the first `classes` catalog actions,
/// ordered by class and then index.
pub fn synthetic_dataset(
    classes: usize,
    per_class: usize,
    frames: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    if classes < 2 || classes > class_count() {
        return Err(Error::Config(format!(
            "synthetic classes must be in 2..={}, got {classes}",
            class_count()
        )));
    }
    let mut out = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            out.push(synth_generate(c, synthetic_seed(seed, c, i), frames, noise_sigma)?);
        }
    }
    Ok(out)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Every `*.json` sample in `dir`, in file-name order.
pub fn load_json_dir(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    sorted_files(dir, "json")?
        .iter()
        .map(|p| SkeletonSequence::read_json(p))
        .collect()
}

/// Every `*.skeleton` file in `dir`, in file-name order.
pub fn load_ntu_dir(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    sorted_files(dir, "skeleton")?
        .iter()
        .map(|p| parse_ntu_file(p))
        .collect()
}

pub fn load_dataset(cfg: &DataConfig, seed: u64) -> Result<Vec<SkeletonSequence>> {
    let data = match cfg.source {
        DataSource::Synthetic => {
            synthetic_dataset(cfg.classes, cfg.per_class, cfg.frames, cfg.noise_sigma, seed)?
        }
        DataSource::Json | DataSource::Ntu => {
            let dir = cfg
                .path
                .as_deref()
                .ok_or_else(|| Error::Config("data.path is not set".into()))?;
            if cfg.source == DataSource::Json {
                load_json_dir(dir)?
            } else {
                load_ntu_dir(dir)?
            }
        }
    };
    if data.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    Ok(data)
}

/// Number of classes implied by the labels.
pub fn label_count(data: &[SkeletonSequence]) -> usize {
    data.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

/// Per class, the last `round(n * holdout)` samples (in input order) are held
/// out; the rest form the training set. Both halves keep input order.
pub fn split_holdout(
    data: Vec<SkeletonSequence>,
    holdout: f64,
) -> (Vec<SkeletonSequence>, Vec<SkeletonSequence>) {
    let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &data {
        *totals.entry(s.label).or_default() += 1;
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut train_set, mut held) = (Vec::new(), Vec::new());
    for s in data {
        let n = totals[&s.label];
        let keep = n - ((n as f64 * holdout).round() as usize).min(n);
        let i = seen.entry(s.label).or_default();
        if *i < keep {
            train_set.push(s);
        } else {
            held.push(s);
        }
        *i += 1;
    }
    (train_set, held)
}

pub fn to_samples(data: &[SkeletonSequence], graph: &SkeletonGraph) -> Result<Vec<Sample>> {
    data.iter()
        .map(|s| {
            Ok(Sample {
                input: preprocess(s, graph)?,
                label: s.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// `true` when the model was trained in this call.
    pub trained: bool,
}

/// Loads `checkpoint`, or trains a fresh model and saves it there when the
/// file is missing and `train_if_missing` is set.
#[allow(clippy::too_many_arguments)]
pub fn load_or_train(
    checkpoint: &Path,
    train_if_missing: bool,
    hp: &TrainHyperparams,
    train_set: &[SkeletonSequence],
    validation: &[SkeletonSequence],
    classes: usize,
    graph: &SkeletonGraph,
    seed: u64,
) -> Result<LoadedModel> {
    if checkpoint.exists() {
        let ck = load_checkpoint(checkpoint)?;
        let params = ck.to_params()?;
        return Ok(LoadedModel {
            params,
            history: ck.history,
            trained: false,
        });
    }
    if !train_if_missing {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist and training is disabled",
            checkpoint.display()
        )));
    }
    let model = train(
        &to_samples(train_set, graph)?,
        &to_samples(validation, graph)?,
        classes,
        graph,
        hp,
        training_seed(seed),
    )?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(checkpoint, &model.params, &model.history)?;
    Ok(LoadedModel {
        params: model.params,
        history: model.history,
        trained: true,
    })
}
