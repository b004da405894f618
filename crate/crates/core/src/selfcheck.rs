//! Fast invariant suite: oracles and round trips that must hold on any build.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::binning::{bin_target, decode_expectation, make_bin_scheme, BinScheme};
use crate::error::Result;
use crate::eval::Scope;
use crate::geometry::{angles_to_vector, angular_error, vector_to_angles, GazeAngles, GazeVector};
use crate::loss::{cls_loss, cls_loss_with_grad, total_gaze_loss_with_grad, GazeLossConfig, LossConfig, LOG_CLAMP};
use crate::model::{batch_images, build_model, ModelConfig};
use crate::oracle;
use crate::Image;

/// Maps a probability vector to a decoded angle in degrees.
pub type Decoder = fn(&[f64], &BinScheme) -> Result<f64>;

#[derive(Debug, Clone, Copy)]
pub struct SelfCheckOptions {
    /// Decoder under test; the library's expectation decoder by default.
    pub decoder: Decoder,
    pub seed: u64,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self {
            decoder: decode_expectation,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest deviation observed, in the check's own unit.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    #[serde(serialize_with = "ser_secs")]
    pub elapsed: Duration,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<34} {:>6} {:>12} {:>10} {:>8}  result",
            "check", "cases", "worst", "tolerance", "secs"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<34} {:>6} {:>12.3e} {:>10.0e} {:>8.3}  {}{}",
                c.name,
                c.cases,
                c.worst,
                c.tolerance,
                c.elapsed.as_secs_f64(),
                if c.passed { "PASS" } else { "FAIL" },
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", c.detail)
                }
            );
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.checks.len());
        out
    }
}

fn check(name: &'static str, tolerance: f64, f: impl FnOnce() -> Result<(usize, f64)>) -> CheckResult {
    let start = Instant::now();
    let (cases, worst, detail) = match f() {
        Ok((cases, worst)) => (cases, worst, String::new()),
        Err(e) => (0, f64::INFINITY, e.to_string()),
    };
    CheckResult {
        name,
        cases,
        worst,
        tolerance,
        // NaN fails.
        passed: worst <= tolerance,
        detail,
        elapsed: start.elapsed(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-4;

/// Worst relative error of the analytic `cls_loss` gradient against central
/// differences over `cases` random problems for each β in `betas`.
pub fn loss_gradient_worst(seed: u64, cases: usize, betas: &[f64]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for &beta in betas {
        for _ in 0..cases {
            let n_bins = rng.random_range(2..=30);
            let batch = rng.random_range(1..=6);
            let half = rng.random_range(5.0..60.0);
            let scheme = make_bin_scheme(-half, half, n_bins)?;
            let config = LossConfig::new(beta, scheme.clone())?;
            let logits = Array2::from_shape_fn((batch, n_bins), |_| rng.random_range(-3.0..3.0));
            let targets = (0..batch)
                .map(|_| bin_target(rng.random_range(-half..half), &scheme))
                .collect::<Result<Vec<_>>>()?;
            let (_, analytic) = cls_loss_with_grad(logits.view(), &targets, &config)?;
            let flat: Vec<f64> = logits.iter().copied().collect();
            let numeric = oracle::central_difference(
                |x| {
                    let l = Array2::from_shape_vec((batch, n_bins), x.to_vec()).expect("shape");
                    cls_loss(l.view(), &targets, &config).expect("valid").total
                },
                &flat,
                GRAD_STEP,
            );
            let a: Vec<f64> = analytic.iter().copied().collect();
            worst = worst.max(oracle::relative_error(&a, &numeric));
        }
    }
    Ok(worst)
}

/// Worst |angular_error - extended-precision arccos| in degrees.
pub fn metric_worst(seed: u64, pairs: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
        let ours = angular_error(&GazeVector::new(a[0], a[1], a[2])?, &GazeVector::new(b[0], b[1], b[2])?);
        worst = worst.max((ours - oracle::angular_error_deg(a, b)).abs());
    }
    Ok(worst)
}

/// Worst |decode(one_hot(i)) - centers[i]| over both default schemes.
pub fn one_hot_worst(decoder: Decoder) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for scheme in [BinScheme::mpiigaze(), BinScheme::gaze360()] {
        for (i, &c) in scheme.centers().iter().enumerate() {
            worst = worst.max((decoder(&scheme.one_hot(i), &scheme)? - c).abs());
            cases += 1;
        }
    }
    Ok((cases, worst))
}

/// Worst excess of |decode(one_hot(bin_target(a))) - a| over width/2, for
/// random in-range angles in both default schemes. Zero means the bound holds.
pub fn bin_round_trip_excess(decoder: Decoder, seed: u64, angles: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for scheme in [BinScheme::mpiigaze(), BinScheme::gaze360()] {
        for _ in 0..angles {
            let a = rng.random_range(scheme.min_deg()..=scheme.max_deg());
            let t = bin_target(a, &scheme)?;
            let d = decoder(&t.one_hot(), &scheme)?;
            worst = worst.max((d - a).abs() - scheme.width() / 2.0);
        }
    }
    Ok(worst.max(0.0))
}

fn angle_round_trip(seed: u64, n: usize) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let a = GazeAngles::from_degrees(rng.random_range(-89.0..89.0), rng.random_range(-179.0..179.0));
        let back = vector_to_angles(&angles_to_vector(a)?);
        worst = worst.max((back.pitch - a.pitch).abs()).max((back.yaw - a.yaw).abs());
    }
    Ok((n, worst.to_degrees()))
}

/// Analytic backward pass of the toy model against central differences on a
/// sample of parameter coordinates.
fn model_gradient(seed: u64) -> Result<(usize, f64)> {
    let scheme = make_bin_scheme(-30.0, 30.0, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model(&ModelConfig {
        seed,
        ..ModelConfig::toy(scheme.n_bins())
    })?;
    let images: Vec<Image> = (0..2)
        .map(|_| Image::from_shape_fn((3, 32, 32), |_| rng.random_range(0.0..1.0)))
        .collect();
    let x = batch_images(&images.iter().collect::<Vec<_>>())?;
    let yaw_t = vec![bin_target(10.0, &scheme)?, bin_target(-20.0, &scheme)?];
    let pitch_t = vec![bin_target(-5.0, &scheme)?, bin_target(25.0, &scheme)?];
    let config = GazeLossConfig::shared(LossConfig::new(1.0, scheme)?);

    model.zero_grad();
    let (y, p) = model.forward_train(&x)?;
    let (_, g) = total_gaze_loss_with_grad(y.view(), p.view(), &yaw_t, &pitch_t, &config)?;
    model.backward(&g.yaw, &g.pitch);

    let trainable: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(i, _)| i)
        .collect();
    let mut coords = Vec::new();
    for &t in &trainable {
        let len = model.params()[t].value.len();
        coords.push((t, rng.random_range(0..len)));
    }
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(t, j)| model.params()[t].grad.as_slice().expect("contiguous")[j])
        .collect();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(coords.len());
    for &(t, j) in &coords {
        let mut eval_at = |delta: f64| -> Result<f64> {
            model.params_mut()[t].value.as_slice_mut().expect("contiguous")[j] += delta;
            let (y, p) = model.forward(&x)?;
            model.params_mut()[t].value.as_slice_mut().expect("contiguous")[j] -= delta;
            let (l, _) = total_gaze_loss_with_grad(y.view(), p.view(), &yaw_t, &pitch_t, &config)?;
            Ok(l.total)
        };
        numeric.push((eval_at(h)? - eval_at(-h)?) / (2.0 * h));
    }
    Ok((coords.len(), oracle::relative_error(&analytic, &numeric)))
}

fn scope_nesting(seed: u64, n: usize) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..n {
        let a = GazeAngles::from_degrees(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0));
        let g = angles_to_vector(a)?;
        let to_axis = oracle::angular_error_deg([g.x(), g.y(), g.z()], [0.0, 0.0, -1.0]);
        let ff = Scope::FrontFacing.contains(a);
        let f180 = Scope::Front180.contains(a);
        // Exact boundary cases are ambiguous at double precision.
        let near_edge = (to_axis - crate::eval::FRONT_FACING_DEG).abs() < 1e-9;
        if (ff && !f180) || (!near_edge && ff != (to_axis <= crate::eval::FRONT_FACING_DEG)) || f180 != (g.z() < 0.0) {
            violations += 1;
        }
    }
    Ok((n, violations as f64))
}

/// Runs every check. Takes a few seconds on one core.
pub fn run_selfcheck(options: &SelfCheckOptions) -> SelfCheckReport {
    let seed = options.seed;
    let decoder = options.decoder;
    let checks = vec![
        check("loss gradient vs central diff", GRAD_TOL, || {
            Ok((60, loss_gradient_worst(seed, 20, &[0.0, 1.0, 2.0])?))
        }),
        check("model gradient vs central diff", 1e-4, || model_gradient(seed)),
        check("angular error vs double-double", 1e-6, || Ok((1000, metric_worst(seed, 1000)?))),
        check("decode(one_hot(i)) == center", 0.0, || one_hot_worst(decoder)),
        check("bin round trip within width/2", 0.0, || {
            Ok((20_000, bin_round_trip_excess(decoder, seed, 10_000)?))
        }),
        check("angles -> vector -> angles (deg)", 1e-9, || angle_round_trip(seed, 10_000)),
        check("scope nesting violations", 0.0, || scope_nesting(seed, 10_000)),
        check("log clamp keeps loss finite", 0.0, || {
            let scheme = make_bin_scheme(-10.0, 10.0, 4)?;
            let config = LossConfig::new(2.0, scheme.clone())?;
            let logits = Array2::from_shape_vec((1, 4), vec![1e4, -1e4, -1e4, -1e4]).expect("shape");
            let out = cls_loss(logits.view(), &[bin_target(9.0, &scheme)?], &config)?;
            let bound = -LOG_CLAMP.ln();
            Ok((1, if out.total.is_finite() && out.cross_entropy <= bound + 1e-9 { 0.0 } else { 1.0 }))
        }),
    ];
    SelfCheckReport { checks }
}
