use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attribution::Method;
use crate::error::{Error, Result};
use crate::metrics::{FaithfulnessConfig, StabilityConfig};
use crate::model::TrainHyperparams;
use crate::skeleton::synth::{class_count, DEFAULT_FRAMES, DEFAULT_NOISE_SIGMA};
use crate::skeleton::NTU_JOINTS;

/// Environment variable that replaces `output_dir` of any loaded config.
pub const OUTPUT_DIR_ENV: &str = "SKELXAI_OUTPUT_DIR";

pub const DEFAULT_RADII_CM: [f64; 6] = [2.5, 5.0, 10.0, 20.0, 40.0, 80.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generated on the fly from the built-in action catalog.
    Synthetic,
    /// A directory of sample JSON files.
    Json,
    /// A directory of NTU `.skeleton` files.
    Ntu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory for the `json` and `ntu` sources.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    /// Fraction of each class held out from training and used for evaluation.
    pub holdout: f64,
    /// Caps the evaluated samples per class; 0 keeps all of them.
    pub max_eval_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            classes: class_count(),
            per_class: 200,
            frames: DEFAULT_FRAMES,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            holdout: 0.2,
            max_eval_per_class: 0,
        }
    }
}

/// Which classes are evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClassFilter {
    All,
    /// The classes with the highest and lowest held-out accuracy.
    #[default]
    BestWorst,
    Ids(Vec<usize>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClassFilterRepr {
    Name(String),
    Ids(Vec<usize>),
}

impl<'de> Deserialize<'de> for ClassFilter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ClassFilterRepr::deserialize(d)? {
            ClassFilterRepr::Ids(ids) => Ok(ClassFilter::Ids(ids)),
            ClassFilterRepr::Name(s) => match s.as_str() {
                "all" => Ok(ClassFilter::All),
                "best-worst" => Ok(ClassFilter::BestWorst),
                _ => Err(serde::de::Error::custom(format!(
                    "class filter must be \"all\", \"best-worst\" or a list of ids, got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for ClassFilter {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClassFilter::All => s.serialize_str("all"),
            ClassFilter::BestWorst => s.serialize_str("best-worst"),
            ClassFilter::Ids(ids) => ids.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub checkpoint: PathBuf,
    pub train_if_missing: bool,
    pub train: TrainHyperparams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("model.json"),
            train_if_missing: true,
            train: TrainHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub radii_cm: Vec<f64>,
    pub methods: Vec<Method>,
    pub class_filter: ClassFilter,
    /// Apply ReLU to the Grad-CAM map.
    pub gradcam_rectify: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// `radius_m` and `seed` are set per sweep point and sample.
    pub faithfulness: FaithfulnessConfig,
    /// `radius_m` and `seed` are set per sweep point and sample.
    pub stability: StabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("results"),
            radii_cm: DEFAULT_RADII_CM.to_vec(),
            methods: Method::ALL.to_vec(),
            class_filter: ClassFilter::default(),
            gradcam_rectify: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            faithfulness: FaithfulnessConfig::default(),
            stability: StabilityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory, and `SKELXAI_OUTPUT_DIR` overrides `output_dir`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.model.checkpoint);
        if let Some(p) = self.data.path.as_mut() {
            fix(p);
        }
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii_cm.is_empty() {
            return Err(Error::Config("radii_cm is empty".into()));
        }
        if let Some(r) = self.radii_cm.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("radii must be positive, got {r}")));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods is empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods contains duplicates".into()));
        }
        if !(0.0..1.0).contains(&self.data.holdout) {
            return Err(Error::Config(format!(
                "holdout must be in [0, 1), got {}",
                self.data.holdout
            )));
        }
        if self.data.source != DataSource::Synthetic && self.data.path.is_none() {
            return Err(Error::Config("data.path is required for json and ntu sources".into()));
        }
        if let ClassFilter::Ids(ids) = &self.class_filter {
            if ids.is_empty() {
                return Err(Error::Config("class_filter list is empty".into()));
            }
        }
        self.faithfulness.validate(NTU_JOINTS)?;
        self.stability.validate()?;
        Ok(())
    }
}
