//! Samples, dataset ingestion from the on-disk layout, the synthetic
//! generator, and assembly of binned training targets.

mod convert;
mod layout;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binning::{bin_target, BinScheme, BinnedTarget};
use crate::error::{Error, Result};
use crate::geometry::GazeAngles;
use crate::Image;

pub use convert::{preprocess, subject_counts, PreprocessSummary};
pub use layout::{export_dataset, load_dataset, read_image, write_image};
pub use synthetic::{generate_synthetic, DiskLayout, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mpiigaze,
    Gaze360,
    Synthetic,
}

impl DatasetKind {
    /// Bin scheme matching the dataset's annotation range.
    pub fn default_scheme(self) -> BinScheme {
        match self {
            DatasetKind::Gaze360 => BinScheme::gaze360(),
            DatasetKind::Mpiigaze | DatasetKind::Synthetic => BinScheme::mpiigaze(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DatasetKind::Mpiigaze => "MPIIGaze",
            DatasetKind::Gaze360 => "Gaze360",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mpiigaze" => Ok(Self::Mpiigaze),
            "gaze360" => Ok(Self::Gaze360),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(Error::invalid(format!("unknown dataset kind {s:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    /// Image path relative to the dataset root, or a `synthetic://` id.
    pub source: String,
    pub split: Split,
    pub head_pose: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub gaze: GazeAngles,
    pub subject_id: String,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub scheme: BinScheme,
    pub split: Split,
}

/// Image plus both binned targets, in degrees.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub image: &'a Image,
    pub yaw: BinnedTarget,
    pub pitch: BinnedTarget,
}

pub fn prepare_training_set<'a>(samples: &'a [Sample], scheme: &BinScheme) -> Result<Vec<TrainingExample<'a>>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainingExample {
                image: &s.image,
                yaw: bin_target(s.gaze.yaw_deg(), scheme)?,
                pitch: bin_target(s.gaze.pitch_deg(), scheme)?,
            })
        })
        .collect()
}

/// Split for the `index`-th sample of a set that carries no split tags:
/// three of every five go to train, then one each to val and test.
pub fn default_split(index: usize) -> Split {
    match index % 5 {
        0..=2 => Split::Train,
        3 => Split::Val,
        _ => Split::Test,
    }
}

/// Tags every untagged (`Split::All`) sample with [`default_split`].
pub fn assign_default_splits(samples: &mut [Sample]) {
    for (i, s) in samples.iter_mut().enumerate() {
        if s.meta.split == Split::All {
            s.meta.split = default_split(i);
        }
    }
}

/// Samples tagged `split`; `Split::All` selects everything.
pub fn select_split(samples: &[Sample], split: Split) -> Vec<Sample> {
    samples
        .iter()
        .filter(|s| split == Split::All || s.meta.split == split)
        .cloned()
        .collect()
}

/// Distinct subject ids in sorted order.
pub fn subjects(samples: &[Sample]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    set.into_iter().map(str::to_owned).collect()
}
