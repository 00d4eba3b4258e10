//! The single TOML file that drives an experiment sweep.
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected. Relative paths are resolved against the working directory.
//!
//! ```toml
//! architectures = ["DNN", "LSTM_AE"]
//! workers = 2
//!
//! [data]
//! dir = "data"                 # CSV tree; omit to use [synth]
//! modalities = ["imu", "video"]
//!
//! [synth]
//! n_subjects = 16
//!
//! [features]
//! window_seconds = 2.0
//!
//! [models.LSTM_AE]
//! widths = [176, 128]
//! latent = 64
//!
//! [train]
//! max_epochs = 200
//!
//! [folds]
//! k = 4
//! n_val = 2
//!
//! [output]
//! dir = "reports"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    default_activity_names, load_csv_dir, make_folds, synth_generate, Dataset, FoldPlan, LoadOptions, SynthConfig,
};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Modality};
use crate::models::{ArchKind, ModelSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of `S<id>_<activity>_T<trial>_<modality>.csv` recordings.
    pub dir: Option<PathBuf>,
    pub modalities: Vec<Modality>,
    /// Activity tokens in class order; defaults to `A01`…`A08`.
    pub activities: Option<Vec<String>>,
    /// Channel subset to load; defaults to the first file's columns.
    pub channels: Option<Vec<String>>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            modalities: Modality::ALL.to_vec(),
            activities: None,
            channels: None,
        }
    }
}

/// Per-architecture overrides of the default topology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub widths: Option<Vec<usize>>,
    pub kernel_widths: Option<Vec<usize>>,
    pub pool: Option<usize>,
    pub latent: Option<usize>,
    pub recon_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldSection {
    pub k: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Saved fold plan to reuse instead of drawing one from `k`/`n_val`/`seed`.
    pub plan: Option<PathBuf>,
}

impl Default for FoldSection {
    fn default() -> Self {
        FoldSection {
            k: 4,
            n_val: 2,
            seed: 0,
            plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write each fold's trained weights as `model.ckpt`.
    pub save_models: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("reports"),
            save_models: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architectures: Vec<ArchKind>,
    /// Fold worker threads; 0 selects the number of available cores.
    pub workers: usize,
    pub data: DataSection,
    pub synth: Option<SynthConfig>,
    pub features: FeatureConfig,
    pub models: BTreeMap<String, ModelOverrides>,
    pub train: TrainConfig,
    pub folds: FoldSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architectures: ArchKind::ALL.to_vec(),
            workers: 0,
            data: DataSection::default(),
            synth: None,
            features: FeatureConfig::default(),
            models: BTreeMap::new(),
            train: TrainConfig::default(),
            folds: FoldSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::Config("architectures: list is empty".into()));
        }
        if self.data.modalities.is_empty() {
            return Err(Error::Config("data.modalities: list is empty".into()));
        }
        for key in self.models.keys() {
            key.parse::<ArchKind>()
                .map_err(|_| Error::Config(format!("models.{key}: unknown architecture")))?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        self.features.validate().map_err(|e| Error::Config(format!("features: {e}")))?;
        self.train.validate()?;
        if self.folds.k < 2 {
            return Err(Error::Config(format!("folds.k = {} must be ≥ 2", self.folds.k)));
        }
        Ok(())
    }

    /// Number of fold workers after resolving `0`.
    pub fn worker_count(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }

    /// Default topology for `kind` with this file's overrides applied. Input
    /// shape and class count are filled in at training time.
    pub fn model_spec(&self, kind: ArchKind) -> ModelSpec {
        let mut spec = ModelSpec::default_for(kind, 1, 1, 1);
        spec.dropout = self.train.dropout;
        let over = self
            .models
            .iter()
            .find(|(k, _)| k.parse::<ArchKind>().ok() == Some(kind))
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        if let Some(w) = over.widths {
            spec.widths = w;
        }
        if let Some(k) = over.kernel_widths {
            spec.kernel_widths = k;
        }
        if let Some(p) = over.pool {
            spec.pool = p;
        }
        if let Some(l) = over.latent {
            spec.latent = l;
        }
        if let Some(r) = over.recon_weight {
            spec.recon_weight = r;
        }
        spec
    }

    pub fn activities(&self) -> Vec<String> {
        match (&self.data.activities, &self.synth) {
            (Some(a), _) => a.clone(),
            (None, Some(s)) => default_activity_names(s.n_activities),
            (None, None) => default_activity_names(8),
        }
    }

    /// The saved plan when `folds.plan` is set, otherwise a fresh draw over
    /// the dataset roster.
    pub fn fold_plan(&self, dataset: &Dataset) -> Result<FoldPlan> {
        let plan = match &self.folds.plan {
            Some(path) => FoldPlan::load(path)?,
            None => make_folds(dataset.roster(), self.folds.k, self.folds.n_val, self.folds.seed)?,
        };
        plan.check_roster(dataset.roster())?;
        Ok(plan)
    }

    /// The synthetic dataset, with defaults when `[synth]` is absent.
    pub fn synth_dataset(&self, modality: Modality) -> Result<Dataset> {
        synth_generate(&self.synth.clone().unwrap_or_default(), modality)
    }

    /// The configured CSV tree when `data.dir` is set, otherwise the
    /// synthetic generator (defaults when `[synth]` is absent).
    pub fn load_dataset(&self, modality: Modality) -> Result<Dataset> {
        match &self.data.dir {
            Some(dir) => {
                let opts = LoadOptions {
                    activities: self.activities(),
                    channels: self.data.channels.clone(),
                };
                load_csv_dir(dir, modality, &opts)
            }
            None => self.synth_dataset(modality),
        }
    }
}
