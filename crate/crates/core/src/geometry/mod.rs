//! Gaze representations, the angular error metric, and virtual-camera
//! normalization.
//!
//! Angles are radians. The camera looks along +z; a gaze pointing straight
//! back at the camera is `(0, 0, -1)`:
//!
//! ```text
//! g = (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw))
//! ```

mod normalize;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use normalize::{normalize_sample, NormalizationParams, NormalizedSample};

/// Gaze direction as spherical angles in radians.
///
/// Positive pitch looks up, positive yaw looks left as seen from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeAngles {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeAngles {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    pub fn from_degrees(pitch_deg: f64, yaw_deg: f64) -> Self {
        Self::new(pitch_deg.to_radians(), yaw_deg.to_radians())
    }

    pub fn pitch_deg(&self) -> f64 {
        self.pitch.to_degrees()
    }

    pub fn yaw_deg(&self) -> f64 {
        self.yaw.to_degrees()
    }

    /// Pitch within [-pi/2, pi/2] and yaw within [-pi, pi].
    pub fn is_canonical(&self) -> bool {
        self.pitch.abs() <= std::f64::consts::FRAC_PI_2 && self.yaw.abs() <= std::f64::consts::PI
    }
}

/// Unit-length 3D gaze direction. Construction normalizes and rejects zero or
/// non-finite input, so every value in circulation has norm 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct GazeVector(Vector3<f64>);

impl GazeVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!("non-finite gaze vector {v:?}")));
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::invalid("zero-length gaze vector"));
        }
        Ok(Self(v / norm))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Rotates the direction, re-normalizing the result.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Result<Self> {
        Self::from_vector(rotation * self.0)
    }
}

impl TryFrom<[f64; 3]> for GazeVector {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<GazeVector> for [f64; 3] {
    fn from(g: GazeVector) -> Self {
        [g.0.x, g.0.y, g.0.z]
    }
}

pub fn angles_to_vector(a: GazeAngles) -> Result<GazeVector> {
    if !a.pitch.is_finite() || !a.yaw.is_finite() {
        return Err(Error::invalid(format!("non-finite gaze angles {a:?}")));
    }
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    Ok(GazeVector(Vector3::new(-cp * sy, -sp, -cp * cy)))
}

/// Inverse of [`angles_to_vector`]; yaw comes back in (-pi, pi], and is 0
/// at the poles where it is undefined.
pub fn vector_to_angles(g: &GazeVector) -> GazeAngles {
    let v = g.as_vector();
    let yaw = if v.x == 0.0 && v.z == 0.0 {
        0.0
    } else {
        (-v.x).atan2(-v.z)
    };
    GazeAngles {
        pitch: (-v.y).clamp(-1.0, 1.0).asin(),
        yaw,
    }
}

/// Angle in degrees between two gaze directions, in [0, 180].
pub fn angular_error(g: &GazeVector, g_hat: &GazeVector) -> f64 {
    g.as_vector()
        .dot(g_hat.as_vector())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// [`angular_error`] for arbitrary non-zero vectors.
pub fn angular_error_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::invalid("angular error needs two finite non-zero vectors"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Angular error between two gaze labels given as angles.
pub fn angular_error_angles(a: GazeAngles, b: GazeAngles) -> Result<f64> {
    Ok(angular_error(&angles_to_vector(a)?, &angles_to_vector(b)?))
}

/// Rotation about the optical (z) axis of a camera-frame rotation matrix, in
/// radians.
pub fn roll_angle(rotation: &Matrix3<f64>) -> f64 {
    rotation[(1, 0)].atan2(rotation[(0, 0)])
}
