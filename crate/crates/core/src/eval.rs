//! Angular-error evaluation, scope filters, and leave-one-subject-out folds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{subjects, Sample};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{angles_to_vector, angular_error, GazeAngles};
use crate::model::GazePredictor;

/// Half-angle of the front-facing cone around the camera axis, in degrees.
pub const FRONT_FACING_DEG: f64 = 20.0;

const EVAL_CHUNK: usize = 64;

/// Which samples an evaluation covers, by gaze direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    All,
    /// Gaze with a component toward the camera (`z < 0`).
    Front180,
    /// Gaze within [`FRONT_FACING_DEG`] of the direction straight at the camera.
    FrontFacing,
}

impl Scope {
    pub fn contains(self, gaze: GazeAngles) -> bool {
        match self {
            Scope::All => true,
            Scope::Front180 => (-gaze.pitch.cos() * gaze.yaw.cos()) < 0.0,
            Scope::FrontFacing => {
                // cos of the angle to (0, 0, -1) is cos(pitch) * cos(yaw).
                let c = (gaze.pitch.cos() * gaze.yaw.cos()).clamp(-1.0, 1.0);
                c.acos().to_degrees() <= FRONT_FACING_DEG
            }
        }
    }

    pub fn filter(self, samples: &[Sample]) -> Vec<&Sample> {
        samples.iter().filter(|s| self.contains(s.gaze)).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Front180 => "front180",
            Scope::FrontFacing => "frontfacing",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Scope::All),
            "front180" => Ok(Scope::Front180),
            "frontfacing" | "front-facing" => Ok(Scope::FrontFacing),
            _ => Err(Error::invalid(format!(
                "unknown scope {s:?} (expected all, front180, or frontfacing)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    /// Degrees, in the order of `sample_ids`.
    pub per_sample_errors: Vec<f64>,
    pub sample_ids: Vec<String>,
    pub sample_subjects: Vec<String>,
    pub mean_error: f64,
    pub per_subject: BTreeMap<String, f64>,
    /// Snapshot of whatever configuration produced the predictions.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl EvalReport {
    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.per_sample_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sample_errors.is_empty()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Predicts every sample inside `scope` and measures its angular error.
pub fn evaluate(predictor: &dyn GazePredictor, samples: &[Sample], scope: Scope) -> Result<EvalReport> {
    let kept = scope.filter(samples);
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "no samples left after applying scope {scope}"
        )));
    }
    let chunks: Vec<&[&Sample]> = kept.chunks(EVAL_CHUNK).collect();
    let predicted = exec::try_map_range(chunks.len(), |i| {
        let images: Vec<_> = chunks[i].iter().map(|s| &s.image).collect();
        predictor.predict(&images)
    })?;
    let predicted: Vec<GazeAngles> = predicted.into_iter().flatten().collect();
    if predicted.len() != kept.len() {
        return Err(Error::invalid(format!(
            "predictor returned {} outputs for {} inputs",
            predicted.len(),
            kept.len()
        )));
    }

    let errors = kept
        .iter()
        .zip(&predicted)
        .map(|(s, p)| Ok(angular_error(&angles_to_vector(s.gaze)?, &angles_to_vector(*p)?)))
        .collect::<Result<Vec<f64>>>()?;

    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, e) in kept.iter().zip(&errors) {
        grouped.entry(s.subject_id.clone()).or_default().push(*e);
    }
    Ok(EvalReport {
        scope,
        mean_error: mean(&errors),
        per_sample_errors: errors,
        sample_ids: kept.iter().map(|s| s.meta.source.clone()).collect(),
        sample_subjects: kept.iter().map(|s| s.subject_id.clone()).collect(),
        per_subject: grouped.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        provenance: serde_json::Value::Null,
    })
}

/// One held-out subject.
#[derive(Debug)]
pub struct LosoFold<T> {
    pub subject: String,
    pub train_size: usize,
    pub report: EvalReport,
    pub fitted: T,
}

#[derive(Debug)]
pub struct LosoOutcome<T> {
    /// Sorted by subject id.
    pub folds: Vec<LosoFold<T>>,
    /// Unweighted mean of the per-subject means.
    pub grand_mean: f64,
}

impl<T> LosoOutcome<T> {
    pub fn subject_means(&self) -> BTreeMap<String, f64> {
        self.folds
            .iter()
            .map(|f| (f.subject.clone(), f.report.mean_error))
            .collect()
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> LosoOutcome<U> {
        LosoOutcome {
            grand_mean: self.grand_mean,
            folds: self
                .folds
                .into_iter()
                .map(|fold| LosoFold {
                    subject: fold.subject,
                    train_size: fold.train_size,
                    report: fold.report,
                    fitted: f(fold.fitted),
                })
                .collect(),
        }
    }
}

/// Leave-one-subject-out with an arbitrary fitting procedure.
///
/// `fit(subject, train)` receives the held-out subject id and every other
/// sample. Folds run in parallel; each fold's own work runs sequentially.
pub fn loso<P, F>(samples: &[Sample], scope: Scope, fit: F) -> Result<LosoOutcome<P>>
where
    P: GazePredictor + Send,
    F: Fn(&str, &[Sample]) -> Result<P> + Sync,
{
    let ids = subjects(samples);
    if ids.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            ids.len()
        )));
    }
    let parallel = exec::is_parallel();
    let folds = exec::try_map_range(ids.len(), |i| {
        let run = || -> Result<LosoFold<P>> {
            let subject = &ids[i];
            let (held, train): (Vec<Sample>, Vec<Sample>) =
                samples.iter().cloned().partition(|s| &s.subject_id == subject);
            let fitted = fit(subject, &train)?;
            let report = evaluate(&fitted, &held, scope)?;
            Ok(LosoFold {
                subject: subject.clone(),
                train_size: train.len(),
                report,
                fitted,
            })
        };
        if parallel {
            exec::sequential(run)
        } else {
            run()
        }
    })?;
    let means: Vec<f64> = folds.iter().map(|f| f.report.mean_error).collect();
    Ok(LosoOutcome {
        grand_mean: mean(&means),
        folds,
    })
}
