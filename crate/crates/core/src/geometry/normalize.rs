use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::GazeVector;
use crate::error::{Error, Result};
use crate::exec;
use crate::Image;

/// Camera geometry for one frame plus the virtual camera to warp into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    /// Real camera intrinsics in pixels.
    pub camera_matrix: Matrix3<f64>,
    /// Head rotation in the camera frame (columns are the head axes).
    pub head_rotation: Matrix3<f64>,
    /// Face center in millimetres, camera frame.
    pub face_center: Vector3<f64>,
    /// Distance from the virtual camera to the face center, millimetres.
    pub target_distance: f64,
    /// Virtual camera focal length, pixels.
    pub virtual_focal: f64,
    /// Output (width, height) in pixels.
    pub output_size: (usize, usize),
}

impl NormalizationParams {
    pub const DEFAULT_FOCAL: f64 = 960.0;
    pub const DEFAULT_DISTANCE: f64 = 600.0;
    pub const DEFAULT_SIZE: (usize, usize) = (224, 224);

    pub fn with_defaults(
        camera_matrix: Matrix3<f64>,
        head_rotation: Matrix3<f64>,
        face_center: Vector3<f64>,
    ) -> Self {
        Self {
            camera_matrix,
            head_rotation,
            face_center,
            target_distance: Self::DEFAULT_DISTANCE,
            virtual_focal: Self::DEFAULT_FOCAL,
            output_size: Self::DEFAULT_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.head_rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho < 1e-6) || !((r.determinant() - 1.0).abs() < 1e-6) {
            return Err(Error::invalid("head_rotation must be a proper rotation matrix"));
        }
        if !(self.target_distance > 0.0) || !(self.virtual_focal > 0.0) {
            return Err(Error::invalid("target_distance and virtual_focal must be positive"));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::invalid("output_size must be non-zero"));
        }
        Ok(())
    }

    /// Intrinsics of the virtual camera, principal point at the output center.
    pub fn virtual_camera(&self) -> Matrix3<f64> {
        let (w, h) = self.output_size;
        let f = self.virtual_focal;
        Matrix3::new(f, 0.0, w as f64 / 2.0, 0.0, f, h as f64 / 2.0, 0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedSample {
    pub image: Image,
    /// Gaze direction in the virtual camera frame.
    pub gaze: GazeVector,
    /// Rotation from the real camera frame to the virtual one.
    pub rotation_applied: Matrix3<f64>,
    /// Depth scaling applied after the rotation.
    pub scaling: Matrix3<f64>,
    /// Pixel mapping from the input image to the output image.
    pub warp: Matrix3<f64>,
}

/// Warps `image` (channels x height x width) into a virtual camera that looks
/// straight at the face center from `target_distance`, with the head's x-axis
/// kept in the virtual camera's horizontal plane (zero roll).
pub fn normalize_sample(
    image: &Image,
    params: &NormalizationParams,
    gaze: &GazeVector,
) -> Result<NormalizedSample> {
    if image.is_empty() {
        return Err(Error::invalid("empty input image"));
    }
    params.validate()?;
    let camera_inv = params
        .camera_matrix
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::invalid("camera matrix is singular"))?;

    let distance = params.face_center.norm();
    if !(distance > 1e-9) || !distance.is_finite() {
        return Err(Error::DegenerateGeometry(
            "face center coincides with the camera origin".into(),
        ));
    }
    let forward = params.face_center / distance;
    let head_x = params.head_rotation.column(0).into_owned();
    let down = forward.cross(&head_x);
    if down.norm() < 1e-9 {
        return Err(Error::DegenerateGeometry(
            "head x-axis is parallel to the viewing direction".into(),
        ));
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let scaling = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, params.target_distance / distance));

    let warp = params.virtual_camera() * scaling * rotation * camera_inv;
    let inverse = warp
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("normalization warp is singular".into()))?;

    Ok(NormalizedSample {
        image: warp_perspective(image, &inverse, params.output_size),
        gaze: gaze.rotated(&rotation)?,
        rotation_applied: rotation,
        scaling,
        warp,
    })
}

/// Inverse-maps every output pixel through `inverse` and samples bilinearly;
/// pixels that land outside the source are zero.
fn warp_perspective(src: &Image, inverse: &Matrix3<f64>, (out_w, out_h): (usize, usize)) -> Image {
    let (channels, in_h, in_w) = src.dim();
    let rows: Vec<Array2<f64>> = exec::map_range(out_h, |v| {
        let mut row = Array2::zeros((channels, out_w));
        for u in 0..out_w {
            let p = inverse * Vector3::new(u as f64, v as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            if !(sx >= 0.0 && sy >= 0.0 && sx <= (in_w - 1) as f64 && sy <= (in_h - 1) as f64) {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(in_w - 1), (y0 + 1).min(in_h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..channels {
                let top = src[[c, y0, x0]] * (1.0 - fx) + src[[c, y0, x1]] * fx;
                let bottom = src[[c, y1, x0]] * (1.0 - fx) + src[[c, y1, x1]] * fx;
                row[[c, u]] = top * (1.0 - fy) + bottom * fy;
            }
        }
        row
    });
    let mut out = Array3::zeros((channels, out_h, out_w));
    for (v, row) in rows.into_iter().enumerate() {
        out.index_axis_mut(Axis(1), v).assign(&row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::roll_angle;
    use nalgebra::Rotation3;

    fn camera() -> Matrix3<f64> {
        Matrix3::new(960.0, 0.0, 112.0, 0.0, 960.0, 112.0, 0.0, 0.0, 1.0)
    }

    fn params(head: Matrix3<f64>, center: Vector3<f64>) -> NormalizationParams {
        NormalizationParams::with_defaults(camera(), head, center)
    }

    fn test_image() -> Image {
        Array3::from_shape_fn((3, 224, 224), |(c, y, x)| ((x + 2 * y + 7 * c) % 17) as f64 / 16.0)
    }

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn already_normalized_input_is_untouched() {
        let gaze = GazeVector::new(0.1, -0.2, -1.0).unwrap();
        let image = test_image();
        let p = params(Matrix3::identity(), Vector3::new(0.0, 0.0, 600.0));
        let out = normalize_sample(&image, &p, &gaze).unwrap();
        assert!(max_abs_diff(&out.rotation_applied, &Matrix3::identity()) < 1e-12);
        assert!(max_abs_diff(&out.scaling, &Matrix3::identity()) < 1e-12);
        assert!(max_abs_diff(&out.warp, &Matrix3::identity()) < 1e-9);
        assert!((out.gaze.as_vector() - gaze.as_vector()).norm() < 1e-12);
        let diff = (&out.image - &image).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        assert!(diff < 1e-9);
    }

    #[test]
    fn head_roll_is_removed() {
        let head = *Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).matrix();
        assert!((roll_angle(&head) - 30f64.to_radians()).abs() < 1e-12);
        let p = params(head, Vector3::new(0.0, 0.0, 600.0));
        let gaze = GazeVector::new(0.0, 0.0, -1.0).unwrap();
        let out = normalize_sample(&test_image(), &p, &gaze).unwrap();
        assert!(roll_angle(&(out.rotation_applied * head)).abs() < 1e-6);
    }

    #[test]
    fn distance_is_rescaled_to_target() {
        let p = params(Matrix3::identity(), Vector3::new(0.0, 0.0, 1200.0));
        let gaze = GazeVector::new(0.0, 0.0, -1.0).unwrap();
        let out = normalize_sample(&test_image(), &p, &gaze).unwrap();
        assert!((out.scaling[(2, 2)] - 0.5).abs() < 1e-12);
        let recovered = (out.scaling * out.rotation_applied * p.face_center).norm();
        assert!((recovered - 600.0).abs() < 1e-6);
    }

    #[test]
    fn off_axis_face_with_rolled_and_turned_head() {
        let head = *(Rotation3::from_euler_angles(0.2, -0.3, 0.5)).matrix();
        let center = Vector3::new(80.0, -45.0, 750.0);
        let p = params(head, center);
        let gaze = GazeVector::new(0.2, 0.1, -0.9).unwrap();
        let out = normalize_sample(&test_image(), &p, &gaze).unwrap();
        let normalized = out.rotation_applied * head;
        assert!(roll_angle(&normalized).abs() < 1e-6);
        let virt = out.scaling * out.rotation_applied * center;
        assert!(virt.x.abs() < 1e-9 && virt.y.abs() < 1e-9);
        assert!((virt.z - 600.0).abs() < 1e-6);
        assert!((out.gaze.as_vector().norm() - 1.0).abs() < 1e-12);
        // The face center projects to the output principal point.
        let c = out.warp * (camera() * center);
        assert!((c.x / c.z - 112.0).abs() < 1e-6 && (c.y / c.z - 112.0).abs() < 1e-6);
    }

    #[test]
    fn error_paths() {
        let gaze = GazeVector::new(0.0, 0.0, -1.0).unwrap();
        let img = test_image();
        let mut p = params(Matrix3::identity(), Vector3::zeros());
        assert!(matches!(normalize_sample(&img, &p, &gaze), Err(Error::DegenerateGeometry(_))));
        p.face_center = Vector3::new(0.0, 0.0, 600.0);
        p.camera_matrix = Matrix3::zeros();
        assert!(matches!(normalize_sample(&img, &p, &gaze), Err(Error::InvalidArgument(_))));
        p.camera_matrix = camera();
        p.head_rotation = Matrix3::identity() * 2.0;
        assert!(normalize_sample(&img, &p, &gaze).is_err());
        p.head_rotation = Matrix3::identity();
        assert!(normalize_sample(&Array3::zeros((3, 0, 0)), &p, &gaze).is_err());
    }
}
