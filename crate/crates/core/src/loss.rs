//! Combined classification and regression loss for binned angles.
//!
//! Per angle, logits go through a softmax; the cross entropy is taken against
//! the one-hot bin label and the expectation over bin centers is compared to
//! the continuous label with a squared error. Both terms are batch means:
//!
//! ```text
//! total = CE + beta * MSE
//! ```
//!
//! The yaw and pitch losses are summed into the scalar that training
//! minimizes.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::binning::{expectation, BinScheme, BinnedTarget};
use crate::error::{Error, Result};

/// Floor applied to the target probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub scheme: BinScheme,
}

impl LossConfig {
    pub fn new(beta: f64, scheme: BinScheme) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self { beta, scheme })
    }
}

/// Loss settings for both angles. Usually both share one [`LossConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeLossConfig {
    pub yaw: LossConfig,
    pub pitch: LossConfig,
}

impl GazeLossConfig {
    pub fn shared(config: LossConfig) -> Self {
        Self {
            yaw: config.clone(),
            pitch: config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub total: f64,
    pub cross_entropy: f64,
    pub mse: f64,
    /// Expectation-decoded angle per sample.
    pub decoded_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeLoss {
    pub total: f64,
    pub yaw: LossOutput,
    pub pitch: LossOutput,
}

/// Gradients of [`GazeLoss::total`] with respect to each head's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeLossGrad {
    pub yaw: Array2<f64>,
    pub pitch: Array2<f64>,
}

pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite logits"));
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Cross entropy of one distribution against a one-hot target.
pub fn cross_entropy(probabilities: &[f64], target: &BinnedTarget) -> Result<f64> {
    if probabilities.len() != target.n_bins || target.bin_index >= target.n_bins {
        return Err(Error::invalid(format!(
            "target for {} bins does not match {} probabilities",
            target.n_bins,
            probabilities.len()
        )));
    }
    Ok(-probabilities[target.bin_index].max(LOG_CLAMP).ln())
}

pub fn mean_squared_error(pred_deg: &[f64], target_deg: &[f64]) -> Result<f64> {
    if pred_deg.is_empty() {
        return Err(Error::invalid("mean squared error of an empty batch"));
    }
    if pred_deg.len() != target_deg.len() {
        return Err(Error::invalid(format!(
            "prediction batch {} vs target batch {}",
            pred_deg.len(),
            target_deg.len()
        )));
    }
    let sum: f64 = pred_deg
        .iter()
        .zip(target_deg)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred_deg.len() as f64)
}

pub fn cls_loss(
    logits: ArrayView2<'_, f64>,
    targets: &[BinnedTarget],
    config: &LossConfig,
) -> Result<LossOutput> {
    compute(logits, targets, config, false).map(|(out, _)| out)
}

/// [`cls_loss`] plus its gradient with respect to `logits`.
pub fn cls_loss_with_grad(
    logits: ArrayView2<'_, f64>,
    targets: &[BinnedTarget],
    config: &LossConfig,
) -> Result<(LossOutput, Array2<f64>)> {
    compute(logits, targets, config, true).map(|(out, grad)| (out, grad.expect("requested")))
}

fn compute(
    logits: ArrayView2<'_, f64>,
    targets: &[BinnedTarget],
    config: &LossConfig,
    want_grad: bool,
) -> Result<(LossOutput, Option<Array2<f64>>)> {
    let (batch, width) = logits.dim();
    let scheme = &config.scheme;
    if batch == 0 {
        return Err(Error::invalid("loss of an empty batch"));
    }
    if width != scheme.n_bins() {
        return Err(Error::invalid(format!(
            "logit width {width} does not match {} bins",
            scheme.n_bins()
        )));
    }
    if targets.len() != batch {
        return Err(Error::invalid(format!(
            "{} targets for a batch of {batch}",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.n_bins != width || t.bin_index >= width) {
        return Err(Error::invalid(format!("target {t:?} is not valid for {width} bins")));
    }

    let centers = scheme.centers();
    let n = batch as f64;
    let mut ce_sum = 0.0;
    let mut decoded = Vec::with_capacity(batch);
    let mut grad = want_grad.then(|| Array2::zeros((batch, width)));
    for (row_idx, (row, target)) in logits.rows().into_iter().zip(targets).enumerate() {
        let row = row.to_vec();
        if row.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid(format!("non-finite logits in row {row_idx}")));
        }
        let p = softmax_unchecked(&row);
        let p_target = p[target.bin_index];
        ce_sum += -p_target.max(LOG_CLAMP).ln();
        let e = expectation(&p, centers);
        decoded.push(e);

        if let Some(g) = grad.as_mut() {
            let residual = e - target.continuous_deg;
            let ce_live = p_target >= LOG_CLAMP;
            let mut g_row = g.row_mut(row_idx);
            for j in 0..width {
                let mut v = 0.0;
                if ce_live {
                    v += p[j] - if j == target.bin_index { 1.0 } else { 0.0 };
                }
                v += config.beta * 2.0 * residual * p[j] * (centers[j] - e);
                g_row[j] = v / n;
            }
        }
    }
    let cross_entropy = ce_sum / n;
    let continuous: Vec<f64> = targets.iter().map(|t| t.continuous_deg).collect();
    let mse = mean_squared_error(&decoded, &continuous)?;
    Ok((
        LossOutput {
            total: cross_entropy + config.beta * mse,
            cross_entropy,
            mse,
            decoded_deg: decoded,
        },
        grad,
    ))
}

pub fn total_gaze_loss(
    yaw_logits: ArrayView2<'_, f64>,
    pitch_logits: ArrayView2<'_, f64>,
    yaw_targets: &[BinnedTarget],
    pitch_targets: &[BinnedTarget],
    config: &GazeLossConfig,
) -> Result<GazeLoss> {
    let yaw = cls_loss(yaw_logits, yaw_targets, &config.yaw)?;
    let pitch = cls_loss(pitch_logits, pitch_targets, &config.pitch)?;
    Ok(GazeLoss {
        total: yaw.total + pitch.total,
        yaw,
        pitch,
    })
}

pub fn total_gaze_loss_with_grad(
    yaw_logits: ArrayView2<'_, f64>,
    pitch_logits: ArrayView2<'_, f64>,
    yaw_targets: &[BinnedTarget],
    pitch_targets: &[BinnedTarget],
    config: &GazeLossConfig,
) -> Result<(GazeLoss, GazeLossGrad)> {
    let (yaw, d_yaw) = cls_loss_with_grad(yaw_logits, yaw_targets, &config.yaw)?;
    let (pitch, d_pitch) = cls_loss_with_grad(pitch_logits, pitch_targets, &config.pitch)?;
    Ok((
        GazeLoss {
            total: yaw.total + pitch.total,
            yaw,
            pitch,
        },
        GazeLossGrad {
            yaw: d_yaw,
            pitch: d_pitch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{bin_target, make_bin_scheme};
    use ndarray::array;
    use proptest::prelude::*;

    fn scheme6() -> BinScheme {
        make_bin_scheme(-9.0, 9.0, 6).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(stable_softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-1e3, 0.0, 7.5, 1e3] {
            let p = stable_softmax(&[c; 4]).unwrap();
            assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        let p = stable_softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(stable_softmax(&[f64::NAN, 0.0]).is_err());
        assert!(stable_softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let s = BinScheme::mpiigaze();
        let t = bin_target(0.2, &s).unwrap();
        assert_eq!(cross_entropy(&t.one_hot(), &t).unwrap(), 0.0);
        let ce = cross_entropy(&vec![1.0 / 28.0; 28], &t).unwrap();
        assert!((ce - 3.332_204_510_175_204).abs() < 1e-12);
        let two = make_bin_scheme(-1.0, 1.0, 2).unwrap();
        let t2 = bin_target(0.3, &two).unwrap();
        assert!((cross_entropy(&[0.5, 0.5], &t2).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // Zero probability at the target is clamped, not an error.
        let ce = cross_entropy(&[1.0, 0.0], &t2).unwrap();
        assert!((ce - (-(LOG_CLAMP.ln()))).abs() < 1e-9);
        assert!(cross_entropy(&[1.0], &t2).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mean_squared_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_squared_error(&[3.0], &[0.0]).unwrap(), 9.0);
        assert_eq!(mean_squared_error(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mean_squared_error(&[], &[]).is_err());
        assert!(mean_squared_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn beta_zero_is_pure_cross_entropy() {
        let s = scheme6();
        let logits = array![[0.3, -1.2, 2.0, 0.1, 0.0, -0.4], [1.0, 1.0, -3.0, 0.5, 0.2, 0.9]];
        let targets = [bin_target(1.7, &s).unwrap(), bin_target(-8.0, &s).unwrap()];
        let out = cls_loss(logits.view(), &targets, &LossConfig::new(0.0, s).unwrap()).unwrap();
        assert_eq!(out.total, out.cross_entropy);
        assert!(out.mse > 0.0);
    }

    #[test]
    fn perfect_prediction_limit() {
        let s = scheme6();
        let cfg = LossConfig::new(2.0, s.clone()).unwrap();
        let targets = [bin_target(s.centers()[2], &s).unwrap()];
        let mut last = f64::INFINITY;
        for margin in [5.0, 10.0, 20.0, 40.0] {
            let mut row = vec![0.0; 6];
            row[2] = margin;
            let logits = Array2::from_shape_vec((1, 6), row).unwrap();
            let out = cls_loss(logits.view(), &targets, &cfg).unwrap();
            assert!(out.total < last);
            last = out.total;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let s = scheme6();
        let cfg = LossConfig::new(1.0, s.clone()).unwrap();
        let t = [bin_target(0.0, &s).unwrap()];
        assert!(cls_loss(Array2::zeros((1, 5)).view(), &t, &cfg).is_err());
        assert!(cls_loss(Array2::zeros((2, 6)).view(), &t, &cfg).is_err());
        assert!(cls_loss(Array2::zeros((0, 6)).view(), &[], &cfg).is_err());
        assert!(LossConfig::new(-1.0, s).is_err());
    }

    #[test]
    fn gaze_loss_is_additive_and_separable() {
        let s = scheme6();
        let cfg = GazeLossConfig::shared(LossConfig::new(1.0, s.clone()).unwrap());
        let yaw = array![[0.1, 0.2, 0.3, 0.0, -0.5, 1.0]];
        let pitch = array![[1.0, -0.2, 0.0, 0.4, 0.5, -1.0]];
        let ty = [bin_target(3.3, &s).unwrap()];
        let tp = [bin_target(-2.0, &s).unwrap()];
        let base = total_gaze_loss(yaw.view(), pitch.view(), &ty, &tp, &cfg).unwrap();
        let y = cls_loss(yaw.view(), &ty, &cfg.yaw).unwrap();
        let p = cls_loss(pitch.view(), &tp, &cfg.pitch).unwrap();
        assert!((base.total - (y.total + p.total)).abs() < 1e-12);

        let mut yaw2 = yaw.clone();
        yaw2[[0, 3]] += 0.7;
        let moved = total_gaze_loss(yaw2.view(), pitch.view(), &ty, &tp, &cfg).unwrap();
        assert_eq!(moved.pitch, base.pitch);
        assert_ne!(moved.yaw.total, base.yaw.total);

        let tp_other = [bin_target(7.0, &s).unwrap()];
        let (_, g1) = total_gaze_loss_with_grad(yaw.view(), pitch.view(), &ty, &tp, &cfg).unwrap();
        let (_, g2) = total_gaze_loss_with_grad(yaw.view(), pitch.view(), &ty, &tp_other, &cfg).unwrap();
        assert_eq!(g1.yaw, g2.yaw);
        assert_ne!(g1.pitch, g2.pitch);
    }

    #[test]
    fn both_angles_perfect_gives_zero() {
        let s = scheme6();
        let cfg = GazeLossConfig::shared(LossConfig::new(1.0, s.clone()).unwrap());
        let mut row = vec![-400.0; 6];
        row[4] = 400.0;
        let logits = Array2::from_shape_vec((1, 6), row).unwrap();
        let t = [bin_target(s.centers()[4], &s).unwrap()];
        let out = total_gaze_loss(logits.view(), logits.view(), &t, &t, &cfg).unwrap();
        assert_eq!(out.total, 0.0);
    }

    proptest! {
        #[test]
        fn softmax_is_a_shift_invariant_simplex(z in prop::collection::vec(-50.0f64..50.0, 2..40), c in -100.0f64..100.0) {
            let p = stable_softmax(&z).unwrap();
            prop_assert!(p.iter().all(|v| *v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = stable_softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn raising_the_correct_logit_never_raises_ce(z in prop::collection::vec(-5.0f64..5.0, 6), k in 0usize..6, bump in 0.0f64..10.0) {
            let s = scheme6();
            let t = bin_target(s.centers()[k], &s).unwrap();
            let p0 = stable_softmax(&z).unwrap();
            let mut z1 = z.clone();
            z1[k] += bump;
            let p1 = stable_softmax(&z1).unwrap();
            prop_assert!(cross_entropy(&p1, &t).unwrap() <= cross_entropy(&p0, &t).unwrap() + 1e-12);
        }

        #[test]
        fn total_matches_components(z in prop::collection::vec(-5.0f64..5.0, 12), a in -9.0f64..9.0, b in -9.0f64..9.0, beta in 0.0f64..3.0) {
            let s = scheme6();
            let logits = Array2::from_shape_vec((2, 6), z).unwrap();
            let t = [bin_target(a, &s).unwrap(), bin_target(b, &s).unwrap()];
            let out = cls_loss(logits.view(), &t, &LossConfig::new(beta, s).unwrap()).unwrap();
            prop_assert!((out.total - (out.cross_entropy + beta * out.mse)).abs() < 1e-9);
            prop_assert!(out.cross_entropy >= 0.0 && out.mse >= 0.0);
        }
    }
}
