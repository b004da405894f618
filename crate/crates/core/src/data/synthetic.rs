use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Sample, SampleMeta, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::GazeAngles;
use crate::Image;

/// Settings for the bright-disk dataset: the disk center moves linearly with
/// (yaw, pitch), so the regression task is solvable from pixel positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    /// Square image side in pixels.
    pub image_size: usize,
    /// Std of additive Gaussian pixel noise, in [0, 1].
    pub noise_level: f64,
    /// Half-ranges `[yaw, pitch]` in degrees; labels are uniform in
    /// `[-range, range]`.
    pub angle_range_deg: [f64; 2],
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            image_size: 32,
            noise_level: 0.1,
            angle_range_deg: [30.0, 30.0],
            n_subjects: 4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        if self.image_size < 8 {
            return Err(Error::invalid("image_size must be at least 8"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid("noise_level must be within [0, 1]"));
        }
        let [yaw, pitch] = self.angle_range_deg;
        if !(yaw > 0.0 && yaw <= 180.0) || !(pitch > 0.0 && pitch < 90.0) {
            return Err(Error::invalid(
                "angle_range_deg must be [yaw in (0, 180], pitch in (0, 90)]",
            ));
        }
        if self.n_subjects == 0 {
            return Err(Error::invalid("n_subjects must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> DiskLayout {
        let size = self.image_size as f64;
        let radius = size / 8.0;
        DiskLayout {
            center: (size - 1.0) / 2.0,
            span: size / 2.0 - radius - 1.5,
            radius,
            yaw_range: self.angle_range_deg[0],
            pitch_range: self.angle_range_deg[1],
        }
    }
}

/// Linear map between gaze angles (degrees) and the disk center (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskLayout {
    pub center: f64,
    pub span: f64,
    pub radius: f64,
    pub yaw_range: f64,
    pub pitch_range: f64,
}

impl DiskLayout {
    /// `(x, y)` pixel position for `(yaw_deg, pitch_deg)`. Looking up moves
    /// the disk up.
    pub fn disk_center(&self, yaw_deg: f64, pitch_deg: f64) -> (f64, f64) {
        (
            self.center + yaw_deg / self.yaw_range * self.span,
            self.center - pitch_deg / self.pitch_range * self.span,
        )
    }

    /// Inverse of [`DiskLayout::disk_center`], returning `(yaw_deg, pitch_deg)`.
    pub fn angles_for(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.center) / self.span * self.yaw_range,
            (self.center - y) / self.span * self.pitch_range,
        )
    }
}

const CHANNEL_GAIN: [f64; 3] = [1.0, 0.75, 0.5];

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let layout = config.layout();
    let noise = (config.noise_level > 0.0)
        .then(|| Normal::new(0.0, config.noise_level).expect("positive std"));
    Ok(exec::map_range(config.n_samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let [yr, pr] = config.angle_range_deg;
        let yaw_deg = rng.random_range(-yr..=yr);
        let pitch_deg = rng.random_range(-pr..=pr);
        let (cx, cy) = layout.disk_center(yaw_deg, pitch_deg);
        let n = config.image_size;
        let mut image = Image::zeros((3, n, n));
        for y in 0..n {
            for x in 0..n {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let coverage = (layout.radius + 0.5 - d).clamp(0.0, 1.0);
                for (c, gain) in CHANNEL_GAIN.iter().enumerate() {
                    image[[c, y, x]] = coverage * gain;
                }
            }
        }
        if let Some(dist) = &noise {
            image.mapv_inplace(|v| (v + dist.sample(&mut rng)).clamp(0.0, 1.0));
        }
        Sample {
            image,
            gaze: GazeAngles::from_degrees(pitch_deg, yaw_deg),
            subject_id: format!("p{:02}", i % config.n_subjects),
            meta: SampleMeta {
                source: format!("synthetic://{}/{i:06}", config.seed),
                split: Split::All,
                head_pose: None,
            },
        }
    }))
}
