//! The dual-head gaze network: one shared backbone, one affine logit head
//! per angle, plus expectation decoding and checkpoint I/O.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{decode_expectation, BinScheme};
use crate::error::{Error, Result};
use crate::geometry::GazeAngles;
use crate::loss::stable_softmax;
use crate::nn::{self, global_avg_pool, global_avg_pool_backward, Layer, Linear, Param, Sequential};
use crate::Image;

/// Environment variable naming the directory searched for pretrained weights.
pub const WEIGHTS_DIR_ENV: &str = "GAZEBIN_WEIGHTS_DIR";
pub const RESNET50_WEIGHTS_FILE: &str = "resnet50.safetensors";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    Resnet50,
    ToyCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub n_bins: usize,
    /// Expected (height, width). The toy backbone accepts any size with both
    /// sides at least [`ModelConfig::TOY_MIN_SIDE`].
    pub input_size: (usize, usize),
    pub pretrained: bool,
    /// Per-channel standardization applied after scaling pixels to [0, 1].
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seed: u64,
}

impl ModelConfig {
    pub const TOY_MIN_SIDE: usize = 32;

    pub fn resnet50(n_bins: usize) -> Self {
        Self {
            backbone: Backbone::Resnet50,
            n_bins,
            input_size: (224, 224),
            pretrained: true,
            mean: IMAGENET_MEAN.to_vec(),
            std: IMAGENET_STD.to_vec(),
            seed: 0,
        }
    }

    pub fn toy(n_bins: usize) -> Self {
        Self {
            backbone: Backbone::ToyCnn,
            input_size: (32, 32),
            pretrained: false,
            ..Self::resnet50(n_bins)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::invalid("model needs at least 2 bins per head"));
        }
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::invalid("mean and std must have one entry per channel"));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("std entries must be positive"));
        }
        if self.backbone == Backbone::Resnet50 && self.channels() != 3 {
            return Err(Error::invalid("resnet50 backbone takes 3-channel images"));
        }
        Ok(())
    }
}

pub struct DualHeadModel {
    config: ModelConfig,
    backbone: Sequential,
    feature_dim: usize,
    yaw_head: Linear,
    pitch_head: Linear,
    pretrained_from: Option<PathBuf>,
    spatial: Option<(usize, usize)>,
}

/// Builds a model with seeded initialization. When pretrained weights are
/// requested but cannot be loaded, the backbone keeps its random
/// initialization and a warning is logged; see [`DualHeadModel::pretrained_from`].
pub fn build_model(config: &ModelConfig) -> Result<DualHeadModel> {
    let mut model = build_random(config)?;
    if config.pretrained {
        match load_pretrained_backbone(&mut model) {
            Ok(path) => model.pretrained_from = Some(path),
            Err(e) => log::warn!("{e}; continuing with random backbone initialization"),
        }
    }
    Ok(model)
}

fn build_random(config: &ModelConfig) -> Result<DualHeadModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (backbone, feature_dim) = match config.backbone {
        Backbone::Resnet50 => nn::resnet50(&mut rng),
        Backbone::ToyCnn => nn::toy_cnn(config.channels(), &mut rng),
    };
    let yaw_head = Linear::new("yaw_head", feature_dim, config.n_bins, &mut rng);
    let pitch_head = Linear::new("pitch_head", feature_dim, config.n_bins, &mut rng);
    Ok(DualHeadModel {
        config: config.clone(),
        backbone,
        feature_dim,
        yaw_head,
        pitch_head,
        pretrained_from: None,
        spatial: None,
    })
}

/// Loads torchvision-named backbone weights from
/// `$GAZEBIN_WEIGHTS_DIR/resnet50.safetensors`.
fn load_pretrained_backbone(model: &mut DualHeadModel) -> Result<PathBuf> {
    if model.config.backbone != Backbone::Resnet50 {
        return Err(Error::PretrainedUnavailable(
            "no pretrained weights exist for the toy backbone".into(),
        ));
    }
    let dir = std::env::var_os(WEIGHTS_DIR_ENV).ok_or_else(|| {
        Error::PretrainedUnavailable(format!("{WEIGHTS_DIR_ENV} is not set and no download is attempted"))
    })?;
    let path = Path::new(&dir).join(RESNET50_WEIGHTS_FILE);
    let bytes = fs::read(&path)
        .map_err(|e| Error::PretrainedUnavailable(format!("{}: {e}", path.display())))?;
    load_safetensors(&mut model.backbone, &bytes)
        .map_err(|e| Error::PretrainedUnavailable(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn load_safetensors(backbone: &mut Sequential, bytes: &[u8]) -> std::result::Result<(), String> {
    use safetensors::{tensor::Dtype, SafeTensors};
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
    for p in backbone.params_mut() {
        let view = tensors.tensor(&p.name).map_err(|_| format!("missing tensor {}", p.name))?;
        if view.shape() != p.value.shape() {
            return Err(format!(
                "{}: shape {:?}, expected {:?}",
                p.name,
                view.shape(),
                p.value.shape()
            ));
        }
        let data = view.data();
        let values: Vec<f64> = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            other => return Err(format!("{}: unsupported dtype {other:?}", p.name)),
        };
        p.value = ArrayD::from_shape_vec(IxDyn(view.shape()), values).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Stacks images into a `(batch, channels, height, width)` array.
pub fn batch_images(images: &[&Image]) -> Result<Array4<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty image batch"))?;
    let dim = first.dim();
    if let Some(bad) = images.iter().find(|i| i.dim() != dim) {
        return Err(Error::invalid(format!(
            "image shapes differ in batch: {:?} vs {:?}",
            dim,
            bad.dim()
        )));
    }
    let views: Vec<_> = images.iter().map(|i| i.view()).collect();
    Ok(ndarray::stack(ndarray::Axis(0), &views).expect("checked shapes"))
}

impl DualHeadModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Where the backbone weights came from, if they were loaded.
    pub fn pretrained_from(&self) -> Option<&Path> {
        self.pretrained_from.as_deref()
    }

    fn check_input(&self, images: &Array4<f64>) -> Result<()> {
        let (n, c, h, w) = images.dim();
        if n == 0 {
            return Err(Error::invalid("forward on an empty batch"));
        }
        if c != self.config.channels() {
            return Err(Error::invalid(format!(
                "expected {} channels, got {c}",
                self.config.channels()
            )));
        }
        let ok = match self.config.backbone {
            Backbone::ToyCnn => h >= ModelConfig::TOY_MIN_SIDE && w >= ModelConfig::TOY_MIN_SIDE,
            Backbone::Resnet50 => (h, w) == self.config.input_size,
        };
        if !ok {
            return Err(Error::invalid(format!(
                "input {h}x{w} does not fit the {:?} backbone (configured {:?})",
                self.config.backbone, self.config.input_size
            )));
        }
        Ok(())
    }

    fn standardize(&self, images: &Array4<f64>) -> Array4<f64> {
        let mut x = images.clone();
        for (c, mut plane) in x.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let (m, s) = (self.config.mean[c], self.config.std[c]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
        x
    }

    /// Eval-mode forward pass returning `(yaw_logits, pitch_logits)`.
    pub fn forward(&self, images: &Array4<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(images)?;
        let maps = self.backbone.forward(&self.standardize(images));
        let features = global_avg_pool(&maps);
        Ok((self.yaw_head.forward(&features), self.pitch_head.forward(&features)))
    }

    /// Forward pass that records what [`DualHeadModel::backward`] needs.
    pub fn forward_train(&mut self, images: &Array4<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(images)?;
        let maps = self.backbone.forward_train(&self.standardize(images));
        let (_, _, h, w) = maps.dim();
        self.spatial = Some((h, w));
        let features = global_avg_pool(&maps);
        Ok((
            self.yaw_head.forward_train(&features),
            self.pitch_head.forward_train(&features),
        ))
    }

    /// Accumulates gradients of a scalar loss given its gradients with
    /// respect to both heads' logits.
    pub fn backward(&mut self, d_yaw: &Array2<f64>, d_pitch: &Array2<f64>) {
        let spatial = self.spatial.take().expect("backward without forward_train");
        let d_features = self.yaw_head.backward(d_yaw) + self.pitch_head.backward(d_pitch);
        self.backbone.backward(&global_avg_pool_backward(&d_features, spatial));
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All tensors in a fixed order: backbone, yaw head, pitch head.
    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.yaw_head.params());
        p.extend(self.pitch_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.yaw_head.params_mut());
        p.extend(self.pitch_head.params_mut());
        p
    }

    pub fn backbone_params(&self) -> Vec<&Param> {
        self.backbone.params()
    }

    pub fn head_params(&self) -> (Vec<&Param>, Vec<&Param>) {
        (self.yaw_head.params(), self.pitch_head.params())
    }

    /// Snapshot of every tensor, for comparing parameters across steps.
    pub fn snapshot(&self) -> Vec<ArrayD<f64>> {
        self.params().into_iter().map(|p| p.value.clone()).collect()
    }

    /// Restores tensors taken with [`DualHeadModel::snapshot`].
    pub fn restore(&mut self, snapshot: &[ArrayD<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::invalid(format!(
                "snapshot has {} tensors, model {}",
                snapshot.len(),
                params.len()
            )));
        }
        if let Some(p) = params.iter().zip(snapshot).find(|(p, v)| p.value.shape() != v.shape()) {
            return Err(Error::invalid(format!("snapshot shape mismatch for {}", p.0.name)));
        }
        for (p, v) in params.iter_mut().zip(snapshot) {
            p.value.assign(v);
        }
        Ok(())
    }
}

/// Softmax, expectation decoding, and conversion to radians for both heads.
pub fn predict_gaze(model: &DualHeadModel, images: &Array4<f64>, scheme: &BinScheme) -> Result<Vec<GazeAngles>> {
    if scheme.n_bins() != model.n_bins() {
        return Err(Error::invalid(format!(
            "scheme has {} bins but the model heads have {}",
            scheme.n_bins(),
            model.n_bins()
        )));
    }
    let (yaw, pitch) = model.forward(images)?;
    decode_logits(&yaw, &pitch, scheme)
}

pub(crate) fn decode_logits(yaw: &Array2<f64>, pitch: &Array2<f64>, scheme: &BinScheme) -> Result<Vec<GazeAngles>> {
    yaw.rows()
        .into_iter()
        .zip(pitch.rows())
        .map(|(y, p)| {
            let yaw_deg = decode_expectation(&stable_softmax(&y.to_vec())?, scheme)?;
            let pitch_deg = decode_expectation(&stable_softmax(&p.to_vec())?, scheme)?;
            Ok(GazeAngles::from_degrees(pitch_deg, yaw_deg))
        })
        .collect()
}

/// Anything that maps a batch of images to gaze angles.
pub trait GazePredictor: Sync {
    fn predict(&self, images: &[&Image]) -> Result<Vec<GazeAngles>>;
}

/// A model paired with the bin scheme used to decode it.
pub struct ModelPredictor<'a> {
    pub model: &'a DualHeadModel,
    pub scheme: &'a BinScheme,
}

impl GazePredictor for ModelPredictor<'_> {
    fn predict(&self, images: &[&Image]) -> Result<Vec<GazeAngles>> {
        predict_gaze(self.model, &batch_images(images)?, self.scheme)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    scheme: BinScheme,
    tensors: Vec<StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, model: &DualHeadModel, scheme: &BinScheme) -> Result<()> {
    if scheme.n_bins() != model.n_bins() {
        return Err(Error::Checkpoint(format!(
            "scheme has {} bins, model {}",
            scheme.n_bins(),
            model.n_bins()
        )));
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        scheme: scheme.clone(),
        tensors: model
            .params()
            .into_iter()
            .map(|p| StoredTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.iter().copied().collect(),
            })
            .collect(),
    };
    let bytes = bincode::serialize(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DualHeadModel, BinScheme)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("checkpoint {}", path.display())),
        _ => e.into(),
    })?;
    let file: CheckpointFile =
        bincode::deserialize(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.format_version
        )));
    }
    if file.scheme.n_bins() != file.config.n_bins {
        return Err(Error::Checkpoint(format!(
            "bin scheme has {} bins but the model config has {}",
            file.scheme.n_bins(),
            file.config.n_bins
        )));
    }
    let mut model = build_random(&file.config)?;
    let params = model.params_mut();
    if params.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            file.tensors.len(),
            params.len()
        )));
    }
    for (p, t) in params.into_iter().zip(file.tensors) {
        if p.name != t.name || p.value.shape() != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                t.name,
                t.shape,
                p.name,
                p.value.shape()
            )));
        }
        p.value = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok((model, file.scheme))
}
