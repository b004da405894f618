//! Reference computations used to cross-check the fast paths: double-double
//! evaluations of the metric and the loss, and central finite differences.
//! None of this shares code with the implementations it checks.

use twofloat::TwoFloat;

fn tf(v: f64) -> TwoFloat {
    TwoFloat::from(v)
}

/// arccos of the cosine similarity, in degrees, evaluated in double-double.
pub fn angular_error_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = (0..3).fold(tf(0.0), |acc, i| acc + tf(a[i]) * tf(b[i]));
    let na = (0..3).fold(tf(0.0), |acc, i| acc + tf(a[i]) * tf(a[i])).sqrt();
    let nb = (0..3).fold(tf(0.0), |acc, i| acc + tf(b[i]) * tf(b[i])).sqrt();
    let mut cos = dot / (na * nb);
    if cos > tf(1.0) {
        cos = tf(1.0);
    } else if cos < tf(-1.0) {
        cos = tf(-1.0);
    }
    let deg = cos.acos() * tf(180.0) / twofloat::consts::PI;
    f64::from(deg)
}

/// Scalar reference for one angle's combined loss. Targets are
/// `(bin_index, continuous_deg)`. Returns `(total, cross_entropy, mse)`.
pub fn cls_loss(
    logits: &[Vec<f64>],
    targets: &[(usize, f64)],
    centers: &[f64],
    beta: f64,
    log_clamp: f64,
) -> (f64, f64, f64) {
    let n = tf(logits.len() as f64);
    let mut ce = tf(0.0);
    let mut se = tf(0.0);
    for (row, &(index, continuous)) in logits.iter().zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<TwoFloat> = row.iter().map(|z| (tf(*z) - tf(max)).exp()).collect();
        let denom = exps.iter().fold(tf(0.0), |acc, e| acc + *e);
        let probs: Vec<TwoFloat> = exps.iter().map(|e| *e / denom).collect();
        let p_target = if probs[index] < tf(log_clamp) {
            tf(log_clamp)
        } else {
            probs[index]
        };
        ce += -p_target.ln();
        let mean = probs
            .iter()
            .zip(centers)
            .fold(tf(0.0), |acc, (p, c)| acc + *p * tf(*c));
        let r = mean - tf(continuous);
        se += r * r;
    }
    let ce = ce / n;
    let mse = se / n;
    (f64::from(ce + tf(beta) * mse), f64::from(ce), f64::from(mse))
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
