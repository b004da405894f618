//! Mini-batch training of a [`DualHeadModel`] on the combined gaze loss.

use std::path::PathBuf;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::BinScheme;
use crate::data::{prepare_training_set, Sample, TrainingExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, loso, EvalReport, LosoOutcome, Scope};
use crate::geometry::{angles_to_vector, angular_error, GazeAngles};
use crate::loss::{total_gaze_loss_with_grad, GazeLoss, GazeLossConfig, LossConfig};
use crate::model::{
    batch_images, build_model, save_checkpoint, DualHeadModel, GazePredictor, ModelConfig, ModelPredictor,
};
use crate::optim::{Adam, AdamConfig};
use crate::Image;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const DIVERGED_CHECKPOINT: &str = "diverged.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Where `last.ckpt` and `best.ckpt` are written after each epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 50,
            batch_size: 16,
            beta: 1.0,
            optimizer: Optimizer::Adam,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("train.beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the total loss over the epoch's batches.
    pub mean_loss: f64,
    /// Mean angular error of the decoded training predictions, in degrees.
    pub train_error: f64,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_error: f64,
    pub params: Vec<ArrayD<f64>>,
}

pub struct TrainOutcome {
    /// The final-epoch model.
    pub model: DualHeadModel,
    pub history: Vec<EpochRecord>,
    /// Lowest validation error seen, when a validation set was supplied.
    pub best: Option<BestEpoch>,
}

/// Loss and optimizer state around a model, advanced one batch at a time.
pub struct Trainer {
    model: DualHeadModel,
    loss: GazeLossConfig,
    optimizer: Adam,
    scheme: BinScheme,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(model: DualHeadModel, scheme: BinScheme, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if scheme.n_bins() != model.n_bins() {
            return Err(Error::invalid(format!(
                "scheme has {} bins but the model heads have {}",
                scheme.n_bins(),
                model.n_bins()
            )));
        }
        let optimizer = match config.optimizer {
            Optimizer::Adam => Adam::new(AdamConfig::with_learning_rate(config.learning_rate)),
        };
        Ok(Self {
            model,
            loss: GazeLossConfig::shared(LossConfig::new(config.beta, scheme.clone())?),
            optimizer,
            scheme,
            epoch: 0,
            step: 0,
        })
    }

    pub fn model(&self) -> &DualHeadModel {
        &self.model
    }

    pub fn scheme(&self) -> &BinScheme {
        &self.scheme
    }

    pub fn into_model(self) -> DualHeadModel {
        self.model
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One optimizer update on `batch`. Returns the loss before the update.
    pub fn step(&mut self, batch: &[TrainingExample<'_>]) -> Result<GazeLoss> {
        let images: Vec<&Image> = batch.iter().map(|e| e.image).collect();
        let x = batch_images(&images)?;
        self.step += 1;
        self.model.zero_grad();
        let (yaw, pitch) = self.model.forward_train(&x)?;
        if yaw.iter().chain(pitch.iter()).any(|v| !v.is_finite()) {
            return Err(self.diverged("non-finite logits"));
        }
        let yaw_t: Vec<_> = batch.iter().map(|e| e.yaw).collect();
        let pitch_t: Vec<_> = batch.iter().map(|e| e.pitch).collect();
        let (loss, grad) = total_gaze_loss_with_grad(yaw.view(), pitch.view(), &yaw_t, &pitch_t, &self.loss)?;
        if !loss.total.is_finite() {
            return Err(self.diverged(&format!("loss is {}", loss.total)));
        }
        self.model.backward(&grad.yaw, &grad.pitch);
        self.optimizer.step(self.model.params_mut());
        Ok(loss)
    }

    fn diverged(&self, what: &str) -> Error {
        let norm: f64 = self
            .model
            .params()
            .iter()
            .map(|p| p.value.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        Error::Diverged {
            epoch: self.epoch,
            step: self.step,
            detail: format!("{what}; parameter L2 norm {norm:.6e}"),
        }
    }
}

/// Trains for `config.epochs` epochs over seeded shuffles of `train_set`.
///
/// When `val` is given, its angular error is recorded after each epoch
/// and the best epoch's parameters are kept.
pub fn train(
    model: DualHeadModel,
    scheme: &BinScheme,
    train_set: &[TrainingExample<'_>],
    val: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut trainer = Trainer::new(model, scheme.clone(), config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<BestEpoch> = None;

    for epoch in 1..=config.epochs {
        trainer.epoch = epoch;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<TrainingExample<'_>> = idx.iter().map(|&i| train_set[i]).collect();
            let loss = match trainer.step(&batch) {
                Ok(l) => l,
                Err(e @ Error::Diverged { .. }) => {
                    if let Some(dir) = &config.checkpoint_dir {
                        let path = dir.join(DIVERGED_CHECKPOINT);
                        if let Err(save) = save_checkpoint(&path, &trainer.model, scheme) {
                            log::warn!("could not save {}: {save}", path.display());
                        }
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss.total * batch.len() as f64;
            err_sum += batch_error(&loss, &batch)?;
        }
        let n = train_set.len() as f64;
        let val_error = match val {
            Some(v) => {
                let p = ModelPredictor {
                    model: &trainer.model,
                    scheme,
                };
                Some(evaluate(&p, v, Scope::All)?.mean_error)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / n,
            train_error: err_sum / n,
            val_error,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, train error {:.3} deg{}",
            config.epochs,
            record.mean_loss,
            record.train_error,
            val_error.map(|v| format!(", val error {v:.3} deg")).unwrap_or_default()
        );

        let improved = match (&best, val_error) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(b), Some(v)) => v < b.val_error,
        };
        if improved {
            best = Some(BestEpoch {
                epoch,
                val_error: val_error.expect("checked"),
                params: trainer.model.snapshot(),
            });
        }
        if let Some(dir) = &config.checkpoint_dir {
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &trainer.model, scheme)?;
            if improved || val.is_none() {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), &trainer.model, scheme)?;
            }
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
        best,
    })
}

/// Sum of angular errors of the decoded predictions in `loss` against the
/// batch labels.
fn batch_error(loss: &GazeLoss, batch: &[TrainingExample<'_>]) -> Result<f64> {
    let mut sum = 0.0;
    for ((&y, &p), e) in loss.yaw.decoded_deg.iter().zip(&loss.pitch.decoded_deg).zip(batch) {
        let pred = angles_to_vector(GazeAngles::from_degrees(p, y))?;
        let label = angles_to_vector(GazeAngles::from_degrees(e.pitch.continuous_deg, e.yaw.continuous_deg))?;
        sum += angular_error(&label, &pred);
    }
    Ok(sum)
}

/// Mean angular error of `predictor` on a batch of training examples,
/// measured against their continuous labels.
pub fn mean_error_on(predictor: &dyn GazePredictor, batch: &[TrainingExample<'_>]) -> Result<f64> {
    let images: Vec<&Image> = batch.iter().map(|e| e.image).collect();
    let predicted = predictor.predict(&images)?;
    let mut sum = 0.0;
    for (p, e) in predicted.iter().zip(batch) {
        let label = angles_to_vector(GazeAngles::from_degrees(e.pitch.continuous_deg, e.yaw.continuous_deg))?;
        sum += angular_error(&label, &angles_to_vector(*p)?);
    }
    Ok(sum / batch.len() as f64)
}

/// Output of [`train`] turned into an owned predictor.
pub struct TrainedModel {
    pub model: DualHeadModel,
    pub scheme: BinScheme,
    pub history: Vec<EpochRecord>,
}

impl GazePredictor for TrainedModel {
    fn predict(&self, images: &[&Image]) -> Result<Vec<GazeAngles>> {
        ModelPredictor {
            model: &self.model,
            scheme: &self.scheme,
        }
        .predict(images)
    }
}

/// Leave-one-subject-out cross-validation: one freshly built model per
/// held-out subject, trained on every other subject with `config`.
pub fn loso_cv(
    samples: &[Sample],
    model_config: &ModelConfig,
    scheme: &BinScheme,
    config: &TrainConfig,
    scope: Scope,
) -> Result<LosoOutcome<Vec<EpochRecord>>> {
    config.validate()?;
    let outcome = loso(samples, scope, |subject, train_samples| {
        let set = prepare_training_set(train_samples, scheme)?;
        let fold_config = TrainConfig {
            checkpoint_dir: config.checkpoint_dir.as_ref().map(|d| d.join(subject)),
            ..config.clone()
        };
        let out = train(build_model(model_config)?, scheme, &set, None, &fold_config)?;
        Ok(TrainedModel {
            model: out.model,
            scheme: scheme.clone(),
            history: out.history,
        })
    })?;
    Ok(outcome.map(|m| m.history))
}

/// Evaluation of both the final and the best-validation parameters.
#[derive(Debug, Clone, Serialize)]
pub struct FinalAndBest {
    pub final_epoch: usize,
    pub final_report: EvalReport,
    pub best_epoch: Option<usize>,
    pub best_report: Option<EvalReport>,
}

pub fn evaluate_final_and_best(
    outcome: &mut TrainOutcome,
    scheme: &BinScheme,
    samples: &[Sample],
    scope: Scope,
) -> Result<FinalAndBest> {
    let final_report = evaluate(
        &ModelPredictor {
            model: &outcome.model,
            scheme,
        },
        samples,
        scope,
    )?;
    let (best_epoch, best_report) = match &outcome.best {
        Some(b) => {
            let last = outcome.model.snapshot();
            outcome.model.restore(&b.params)?;
            let r = evaluate(
                &ModelPredictor {
                    model: &outcome.model,
                    scheme,
                },
                samples,
                scope,
            );
            outcome.model.restore(&last)?;
            (Some(b.epoch), Some(r?))
        }
        None => (None, None),
    };
    Ok(FinalAndBest {
        final_epoch: outcome.history.len(),
        final_report,
        best_epoch,
        best_report,
    })
}
