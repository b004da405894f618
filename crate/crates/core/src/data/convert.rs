//! Conversion of a dataset root into the normalized layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::layout::{
    annotation_paths, parse_annotation_file, read_image, read_split_manifest, write_annotation_file, write_image,
    Format, Label, Record, ANNOTATION_DIR, CAMERA_FILE, SPLIT_FILE,
};
use super::DatasetKind;
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{normalize_sample, NormalizationParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub samples: usize,
    pub subjects: usize,
    /// One message per record that could not be converted.
    pub failures: Vec<String>,
}

impl PreprocessSummary {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn read_camera(root: &Path) -> Result<Matrix3<f64>> {
    let path = root.join(CAMERA_FILE);
    let text = fs::read_to_string(&path)?;
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            file: path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
    if values.len() != 9 {
        return Err(Error::Parse {
            file: path,
            line: 1,
            message: format!("expected 9 intrinsics values, found {}", values.len()),
        });
    }
    Ok(Matrix3::from_row_slice(&values))
}

/// Converts `raw_root` into the normalized layout under `out_root`.
///
/// A root with `camera.txt` holds raw frames that are warped with
/// [`normalize_sample`] into the default virtual camera. Any other root is
/// taken to be normalized already and is re-validated and copied. Failing
/// records are skipped and listed in the summary.
pub fn preprocess(raw_root: &Path, out_root: &Path, kind: DatasetKind) -> Result<PreprocessSummary> {
    let paths = annotation_paths(raw_root)?;
    let camera = if raw_root.join(CAMERA_FILE).is_file() {
        Some(read_camera(raw_root)?)
    } else {
        None
    };
    let splits = match kind {
        DatasetKind::Gaze360 => Some(read_split_manifest(raw_root)?),
        _ => None,
    };

    let mut summary = PreprocessSummary::default();
    let mut subjects = BTreeSet::new();
    let mut manifest = String::new();
    for path in &paths {
        let file = parse_annotation_file(path)?;
        summary.failures.extend(file.failures.iter().map(|e| e.to_string()));
        let out_format = match (file.format, camera.is_some()) {
            (Format::Raw, true) => Format::Vector,
            (Format::Raw, false) => {
                summary.failures.push(format!(
                    "{}: raw records need {CAMERA_FILE} in the dataset root",
                    path.display()
                ));
                continue;
            }
            (f, _) => f,
        };
        let results = exec::map_slice(&file.records, |r| match camera {
            Some(k) if file.format == Format::Raw => convert_raw(raw_root, out_root, &file.subject, r, &k),
            _ => copy_normalized(raw_root, out_root, r),
        });
        let mut lines = Vec::new();
        for (r, res) in file.records.iter().zip(results) {
            match res {
                Ok((rel, line)) => {
                    if let Some(map) = &splits {
                        match map.get(&r.image) {
                            Some(split) => manifest.push_str(&format!("{rel} {split}\n")),
                            None => {
                                summary.failures.push(format!(
                                    "{}:{}: {} is missing from {SPLIT_FILE}",
                                    path.display(),
                                    r.line,
                                    r.image
                                ));
                                continue;
                            }
                        }
                    }
                    lines.push(line);
                }
                Err(e) => summary.failures.push(format!("{}:{}: {e}", path.display(), r.line)),
            }
        }
        if !lines.is_empty() {
            summary.samples += lines.len();
            subjects.insert(file.subject.clone());
            write_annotation_file(
                &out_root.join(ANNOTATION_DIR).join(format!("{}.txt", file.subject)),
                out_format,
                &lines,
            )?;
        }
    }
    if splits.is_some() {
        fs::write(out_root.join(SPLIT_FILE), manifest)?;
    }
    summary.subjects = subjects.len();
    Ok(summary)
}

fn label_line(rel: &str, label: &Label, extra: &[f64]) -> String {
    let mut line = match label {
        Label::Vector(v) => format!("{rel} {} {} {}", v.x(), v.y(), v.z()),
        Label::Angles(a) => format!("{rel} {} {}", a.pitch_deg(), a.yaw_deg()),
    };
    for v in extra {
        line.push_str(&format!(" {v}"));
    }
    line
}

fn copy_normalized(raw_root: &Path, out_root: &Path, r: &Record) -> Result<(String, String)> {
    // Decoding validates the image before it is copied.
    read_image(&raw_root.join(&r.image))?;
    let dest = out_root.join(&r.image);
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::copy(raw_root.join(&r.image), &dest)?;
    Ok((r.image.clone(), label_line(&r.image, &r.label, &r.extra)))
}

fn convert_raw(
    raw_root: &Path,
    out_root: &Path,
    subject: &str,
    r: &Record,
    camera: &Matrix3<f64>,
) -> Result<(String, String)> {
    let image = read_image(&raw_root.join(&r.image))?;
    let head_rotation = Matrix3::from_row_slice(&r.extra[..9]);
    let face_center = Vector3::new(r.extra[9], r.extra[10], r.extra[11]);
    let params = NormalizationParams::with_defaults(*camera, head_rotation, face_center);
    let normalized = normalize_sample(&image, &params, &r.label.vector()?)?;
    let stem = Path::new(&r.image)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let rel = format!("images/{subject}/{stem}.png");
    write_image(&out_root.join(&rel), &normalized.image)?;
    Ok((rel.clone(), label_line(&rel, &Label::Vector(normalized.gaze), &[])))
}

/// Per-subject sample counts of a converted root, for reporting.
pub fn subject_counts(root: &Path) -> Result<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for p in annotation_paths(root)? {
        let f = parse_annotation_file(&p)?;
        counts.insert(f.subject, f.records.len());
    }
    Ok(counts)
}
