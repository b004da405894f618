//! Run configuration: a TOML file of optional sections, resolved against
//! per-dataset defaults and command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gazebin::binning::{make_bin_scheme, BinScheme};
use gazebin::data::{DatasetKind, Split, SyntheticConfig};
use gazebin::eval::Scope;
use gazebin::model::{Backbone, ModelConfig};
use gazebin::train::{Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

/// A configuration problem. Reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub scope: Option<Scope>,
    pub dataset: DatasetSection,
    pub scheme: Option<SchemeSection>,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: Option<DatasetKind>,
    pub root: Option<PathBuf>,
    /// Split evaluated by `evaluate`.
    pub split: Option<Split>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub min_deg: f64,
    pub max_deg: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Option<Backbone>,
    pub n_bins: Option<usize>,
    pub input_size: Option<(usize, usize)>,
    pub pretrained: Option<bool>,
    pub mean: Option<Vec<f64>>,
    pub std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub beta: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub checkpoint_dir: Option<PathBuf>,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub dataset: Option<DatasetKind>,
    pub scope: Option<Scope>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
}

/// Fully resolved configuration; serializes back to a loadable file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scope: Scope,
    pub dataset: ResolvedDataset,
    pub scheme: BinScheme,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDataset {
    pub kind: DatasetKind,
    pub root: Option<PathBuf>,
    pub split: Split,
    pub synthetic: SyntheticConfig,
}

/// Training defaults sized for the synthetic set on a CPU. Other datasets
/// use the library defaults.
pub fn desk_scale_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        ..TrainConfig::default()
    }
}

pub fn read_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let file = match path {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        Self::resolve(file, overrides)
    }

    pub fn resolve(file: FileConfig, o: &Overrides) -> anyhow::Result<Self> {
        let seed = o.seed.or(file.seed).unwrap_or(0);
        let kind = o.dataset.or(file.dataset.kind).unwrap_or(DatasetKind::Synthetic);
        let root = file.dataset.root.clone();
        if kind != DatasetKind::Synthetic && root.is_none() {
            return Err(bad(format!("dataset.root is required for dataset kind {kind}")));
        }
        let synthetic = file.dataset.synthetic.clone().unwrap_or_default();
        synthetic
            .validate()
            .map_err(|e| bad(format!("dataset.synthetic: {e}")))?;

        let scheme = match &file.scheme {
            Some(s) => make_bin_scheme(s.min_deg, s.max_deg, s.n_bins).map_err(|e| bad(format!("scheme: {e}")))?,
            None => kind.default_scheme(),
        };

        let m = &file.model;
        if let Some(n) = m.n_bins {
            if n != scheme.n_bins() {
                return Err(bad(format!(
                    "model.n_bins = {n} does not match scheme.n_bins = {}",
                    scheme.n_bins()
                )));
            }
        }
        let default_backbone = match kind {
            DatasetKind::Synthetic => Backbone::ToyCnn,
            _ => Backbone::Resnet50,
        };
        let mut model = match m.backbone.unwrap_or(default_backbone) {
            Backbone::ToyCnn => ModelConfig::toy(scheme.n_bins()),
            Backbone::Resnet50 => ModelConfig::resnet50(scheme.n_bins()),
        };
        if let Some(v) = m.input_size {
            model.input_size = v;
        }
        if let Some(v) = m.pretrained {
            model.pretrained = v;
        }
        if let Some(v) = &m.mean {
            model.mean = v.clone();
        }
        if let Some(v) = &m.std {
            model.std = v.clone();
        }
        model.seed = seed;
        model.validate().map_err(|e| bad(format!("model: {e}")))?;

        let output_dir = o
            .out
            .clone()
            .or(file.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(kind.to_string()));
        let t = &file.train;
        let base = match kind {
            DatasetKind::Synthetic => desk_scale_train(),
            _ => TrainConfig::default(),
        };
        let train = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            epochs: o.epochs.or(t.epochs).unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            beta: o.beta.or(t.beta).unwrap_or(base.beta),
            optimizer: t.optimizer.unwrap_or(base.optimizer),
            seed,
            checkpoint_dir: Some(
                t.checkpoint_dir
                    .clone()
                    .unwrap_or_else(|| output_dir.join("checkpoints")),
            ),
        };
        train.validate().map_err(|e| bad(e.to_string()))?;

        Ok(Self {
            seed,
            scope: o.scope.or(file.scope).unwrap_or(Scope::All),
            dataset: ResolvedDataset {
                kind,
                root,
                split: file.dataset.split.unwrap_or(Split::Test),
                synthetic,
            },
            scheme,
            model,
            train,
            output_dir,
        })
    }

    /// The resolved configuration in the file format, for reruns.
    pub fn to_file_config(&self) -> FileConfig {
        FileConfig {
            seed: Some(self.seed),
            output_dir: Some(self.output_dir.clone()),
            scope: Some(self.scope),
            dataset: DatasetSection {
                kind: Some(self.dataset.kind),
                root: self.dataset.root.clone(),
                split: Some(self.dataset.split),
                synthetic: Some(self.dataset.synthetic.clone()),
            },
            scheme: Some(SchemeSection {
                min_deg: self.scheme.min_deg(),
                max_deg: self.scheme.max_deg(),
                n_bins: self.scheme.n_bins(),
            }),
            model: ModelSection {
                backbone: Some(self.model.backbone),
                n_bins: Some(self.model.n_bins),
                input_size: Some(self.model.input_size),
                pretrained: Some(self.model.pretrained),
                mean: Some(self.model.mean.clone()),
                std: Some(self.model.std.clone()),
            },
            train: TrainSection {
                learning_rate: Some(self.train.learning_rate),
                epochs: Some(self.train.epochs),
                batch_size: Some(self.train.batch_size),
                beta: Some(self.train.beta),
                optimizer: Some(self.train.optimizer),
                checkpoint_dir: self.train.checkpoint_dir.clone(),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file_config()).expect("config serializes to TOML")
    }
}
