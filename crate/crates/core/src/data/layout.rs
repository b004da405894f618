//! The normalized on-disk layout:
//!
//! ```text
//! root/
//!   annotations/<subject>.txt   one file per subject
//!   split.txt                   Gaze360 only: "<image path> <train|val|test>"
//!   <image files>               paths relative to root, PNG
//! ```
//!
//! Each annotation file starts with a format line, then one whitespace
//! separated record per line (`#` starts a comment):
//!
//! ```text
//! #format=vector   <image> <gx> <gy> <gz> [head pose ...]
//! #format=angles   <image> <pitch_deg> <yaw_deg> [head pose ...]
//! #format=raw      <image> <gx> <gy> <gz> <R00 .. R22> <fx> <fy> <fz>
//! ```
//!
//! `raw` files describe un-normalized frames (head rotation row-major, face
//! center in millimetres) and sit next to a `camera.txt` holding the nine
//! intrinsics entries; they are only accepted by [`super::preprocess`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::{default_split, DatasetKind, DatasetSpec, Sample, SampleMeta, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{angles_to_vector, vector_to_angles, GazeAngles, GazeVector};
use crate::Image;

pub(crate) const ANNOTATION_DIR: &str = "annotations";
pub(crate) const SPLIT_FILE: &str = "split.txt";
pub(crate) const CAMERA_FILE: &str = "camera.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Format {
    Vector,
    Angles,
    Raw,
}

impl Format {
    fn header(self) -> &'static str {
        match self {
            Format::Vector => "#format=vector",
            Format::Angles => "#format=angles",
            Format::Raw => "#format=raw",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Label {
    Vector(GazeVector),
    Angles(GazeAngles),
}

impl Label {
    pub fn angles(&self) -> GazeAngles {
        match self {
            Label::Vector(v) => vector_to_angles(v),
            Label::Angles(a) => *a,
        }
    }

    pub fn vector(&self) -> Result<GazeVector> {
        match self {
            Label::Vector(v) => Ok(*v),
            Label::Angles(a) => angles_to_vector(*a),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Record {
    pub line: usize,
    pub image: String,
    pub label: Label,
    /// Head pose for vector/angles files; rotation and face center for raw.
    pub extra: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct AnnotationFile {
    pub path: PathBuf,
    pub subject: String,
    pub format: Format,
    pub records: Vec<Record>,
    /// Lines that failed to parse, as `Error::Parse`.
    pub failures: Vec<Error>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_annotation_file(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path)?;
    let subject = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_error(path, 0, "annotation file name is not valid UTF-8"))?
        .to_owned();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let format = match lines.find(|(_, l)| !l.is_empty()) {
        Some((_, "#format=vector")) => Format::Vector,
        Some((_, "#format=angles")) => Format::Angles,
        Some((_, "#format=raw")) => Format::Raw,
        Some((n, other)) => return Err(parse_error(path, n, format!("expected a #format= header, found {other:?}"))),
        None => return Err(parse_error(path, 0, "empty annotation file")),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_record(line, format) {
            Ok((image, label, extra)) => records.push(Record {
                line: n,
                image,
                label,
                extra,
            }),
            Err(msg) => failures.push(parse_error(path, n, msg)),
        }
    }
    Ok(AnnotationFile {
        path: path.to_path_buf(),
        subject,
        format,
        records,
        failures,
    })
}

fn parse_record(line: &str, format: Format) -> std::result::Result<(String, Label, Vec<f64>), String> {
    let mut fields = line.split_whitespace();
    let image = fields.next().ok_or("missing image path")?.to_owned();
    let numbers = fields
        .map(|f| f.parse::<f64>().map_err(|_| format!("not a number: {f:?}")))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    if numbers.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    let (label, rest) = match format {
        Format::Vector | Format::Raw => {
            if numbers.len() < 3 {
                return Err(format!("expected 3 gaze components, found {}", numbers.len()));
            }
            let v = GazeVector::new(numbers[0], numbers[1], numbers[2]).map_err(|e| e.to_string())?;
            (Label::Vector(v), &numbers[3..])
        }
        Format::Angles => {
            if numbers.len() < 2 {
                return Err(format!("expected 2 gaze angles, found {}", numbers.len()));
            }
            (Label::Angles(GazeAngles::from_degrees(numbers[0], numbers[1])), &numbers[2..])
        }
    };
    if format == Format::Raw && rest.len() != 12 {
        return Err(format!(
            "raw records need 9 rotation and 3 face-center values, found {}",
            rest.len()
        ));
    }
    Ok((image, label, rest.to_vec()))
}

/// Annotation files under `root/annotations`, sorted by path.
pub(crate) fn annotation_paths(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::NotFound(format!("dataset root {}", root.display())));
    }
    let dir = root.join(ANNOTATION_DIR);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        return Err(Error::NotFound(format!(
            "no annotation files in {}",
            dir.display()
        )));
    }
    paths.sort();
    Ok(paths)
}

pub(crate) fn read_split_manifest(root: &Path) -> Result<HashMap<String, Split>> {
    let path = root.join(SPLIT_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::NotFound(format!("split manifest {}", path.display())))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [image, split] = fields.as_slice() else {
            return Err(parse_error(&path, i + 1, "expected \"<image> <split>\""));
        };
        let split: Split = split.parse().map_err(|e: Error| parse_error(&path, i + 1, e.to_string()))?;
        if split == Split::All {
            return Err(parse_error(&path, i + 1, "split must be train, val, or test"));
        }
        map.insert((*image).to_owned(), split);
    }
    Ok(map)
}

/// Reads a PNG (or any format the `image` crate decodes) as RGB in [0, 1].
pub fn read_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    let raw = rgb.into_raw();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        raw[(y * w as usize + x) * 3 + c] as f64 / 255.0
    }))
}

/// Writes a 3-channel or 1-channel image as 8-bit PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (c, h, w) = img.dim();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = match c {
        3 => image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            image::Rgb([0, 1, 2].map(|ch| q(img[[ch, y as usize, x as usize]])))
        })
        .save(path),
        1 => image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([q(img[[0, y as usize, x as usize]])]))
            .save(path),
        _ => return Err(Error::invalid(format!("cannot write a {c}-channel image"))),
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every sample of a normalized-layout dataset, ordered by image path.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    let paths = annotation_paths(&spec.root)?;
    let splits = match spec.kind {
        DatasetKind::Gaze360 => Some(read_split_manifest(&spec.root)?),
        _ => None,
    };
    let files = exec::map_slice(&paths, |p| parse_annotation_file(p));
    let mut entries = Vec::new();
    for file in files {
        let file = file?;
        if file.format == Format::Raw {
            return Err(Error::invalid(format!(
                "{} holds raw frames; run preprocess to normalize them first",
                file.path.display()
            )));
        }
        if let Some(first) = file.failures.into_iter().next() {
            return Err(first);
        }
        for r in file.records {
            let split = match &splits {
                Some(map) => *map.get(&r.image).ok_or_else(|| {
                    parse_error(&file.path, r.line, format!("{} is missing from {SPLIT_FILE}", r.image))
                })?,
                None => Split::All,
            };
            if spec.split != Split::All && split != spec.split {
                continue;
            }
            entries.push((file.subject.clone(), split, r));
        }
    }
    entries.sort_by(|a, b| a.2.image.cmp(&b.2.image));

    exec::try_map_range(entries.len(), |i| {
        let (subject, split, r) = &entries[i];
        Ok(Sample {
            image: read_image(&spec.root.join(&r.image))?,
            gaze: r.label.angles(),
            subject_id: subject.clone(),
            meta: SampleMeta {
                source: r.image.clone(),
                split: *split,
                head_pose: (!r.extra.is_empty()).then(|| r.extra.clone()),
            },
        })
    })
}

fn export_split(sample: &Sample, index: usize) -> Split {
    match sample.meta.split {
        Split::All => default_split(index),
        s => s,
    }
}

/// Writes samples in the normalized layout with angle labels. For Gaze360 a
/// split manifest is written too.
pub fn export_dataset(samples: &[Sample], root: &Path, kind: DatasetKind) -> Result<()> {
    fs::create_dir_all(root.join(ANNOTATION_DIR))?;
    let mut per_subject: std::collections::BTreeMap<&str, Vec<(usize, &Sample)>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        per_subject.entry(s.subject_id.as_str()).or_default().push((i, s));
    }
    let mut manifest = String::new();
    for (subject, items) in &per_subject {
        let mut text = format!("{}\n", Format::Angles.header());
        for (i, s) in items {
            let rel = format!("images/{subject}/{i:06}.png");
            write_image(&root.join(&rel), &s.image)?;
            let mut line = format!("{rel} {} {}", s.gaze.pitch_deg(), s.gaze.yaw_deg());
            for v in s.meta.head_pose.iter().flatten() {
                line.push_str(&format!(" {v}"));
            }
            text.push_str(&line);
            text.push('\n');
            manifest.push_str(&format!("{rel} {}\n", export_split(s, *i)));
        }
        fs::write(root.join(ANNOTATION_DIR).join(format!("{subject}.txt")), text)?;
    }
    if kind == DatasetKind::Gaze360 {
        fs::write(root.join(SPLIT_FILE), manifest)?;
    }
    Ok(())
}

pub(crate) fn write_annotation_file(path: &Path, format: Format, lines: &[String]) -> Result<()> {
    let mut text = format!("{}\n", format.header());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinScheme;
    use crate::data::{generate_synthetic, subjects, SyntheticConfig};

    fn spec(kind: DatasetKind, root: &Path, split: Split) -> DatasetSpec {
        DatasetSpec {
            kind,
            root: root.to_path_buf(),
            scheme: kind.default_scheme(),
            split,
        }
    }

    fn small(n_subjects: usize, n_samples: usize) -> Vec<Sample> {
        generate_synthetic(&SyntheticConfig {
            n_samples,
            n_subjects,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn mpiigaze_style_root_has_fifteen_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let samples = small(15, 45);
        export_dataset(&samples, dir.path(), DatasetKind::Mpiigaze).unwrap();
        let loaded = load_dataset(&spec(DatasetKind::Mpiigaze, dir.path(), Split::All)).unwrap();
        assert_eq!(loaded.len(), 45);
        let ids = subjects(&loaded);
        let expected: Vec<String> = (0..15).map(|i| format!("p{i:02}")).collect();
        assert_eq!(ids, expected);
        // Ordered by path, labels preserved.
        assert!(loaded.windows(2).all(|w| w[0].meta.source < w[1].meta.source));
        for s in &loaded {
            let stem = Path::new(&s.meta.source).file_stem().unwrap().to_str().unwrap();
            let idx: usize = stem.parse().unwrap();
            assert!((s.gaze.yaw - samples[idx].gaze.yaw).abs() < 1e-9);
            assert!((s.gaze.pitch - samples[idx].gaze.pitch).abs() < 1e-9);
            assert_eq!(s.subject_id, samples[idx].subject_id);
        }
    }

    #[test]
    fn gaze360_split_filter() {
        let dir = tempfile::tempdir().unwrap();
        let samples = small(3, 30);
        export_dataset(&samples, dir.path(), DatasetKind::Gaze360).unwrap();
        let train = load_dataset(&spec(DatasetKind::Gaze360, dir.path(), Split::Train)).unwrap();
        let all = load_dataset(&spec(DatasetKind::Gaze360, dir.path(), Split::All)).unwrap();
        assert_eq!(all.len(), 30);
        assert_eq!(train.len(), 18);
        assert!(train.iter().all(|s| s.meta.split == Split::Train));
    }

    #[test]
    fn missing_or_empty_roots_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(DatasetKind::Mpiigaze, dir.path(), Split::All);
        assert!(matches!(load_dataset(&s), Err(Error::NotFound(_))));
        let s = spec(DatasetKind::Mpiigaze, &dir.path().join("nope"), Split::All);
        assert!(matches!(load_dataset(&s), Err(Error::NotFound(_))));
    }

    #[test]
    fn malformed_line_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let samples = small(1, 2);
        export_dataset(&samples, dir.path(), DatasetKind::Mpiigaze).unwrap();
        let ann = dir.path().join(ANNOTATION_DIR).join("p00.txt");
        let mut text = fs::read_to_string(&ann).unwrap();
        text.push_str("images/p00/bad.png 1.0 abc\n");
        fs::write(&ann, text).unwrap();
        match load_dataset(&spec(DatasetKind::Mpiigaze, dir.path(), Split::All)) {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, ann);
                assert_eq!(line, 4);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn vector_labels_become_angles() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_elem((3, 4, 4), 0.5);
        write_image(&dir.path().join("a.png"), &img).unwrap();
        let g = angles_to_vector(GazeAngles::from_degrees(10.0, -20.0)).unwrap();
        write_annotation_file(
            &dir.path().join(ANNOTATION_DIR).join("s1.txt"),
            Format::Vector,
            &[format!("a.png {} {} {} 0.1 0.2", g.x(), g.y(), g.z())],
        )
        .unwrap();
        let loaded = load_dataset(&DatasetSpec {
            kind: DatasetKind::Mpiigaze,
            root: dir.path().to_path_buf(),
            scheme: BinScheme::mpiigaze(),
            split: Split::All,
        })
        .unwrap();
        assert!((loaded[0].gaze.pitch_deg() - 10.0).abs() < 1e-9);
        assert!((loaded[0].gaze.yaw_deg() + 20.0).abs() < 1e-9);
        assert_eq!(loaded[0].meta.head_pose, Some(vec![0.1, 0.2]));
        assert!((loaded[0].image[[0, 1, 1]] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn loading_order_is_independent_of_parallelism() {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&small(4, 40), dir.path(), DatasetKind::Mpiigaze).unwrap();
        let s = spec(DatasetKind::Mpiigaze, dir.path(), Split::All);
        let a = load_dataset(&s).unwrap();
        let b = exec::sequential(|| load_dataset(&s).unwrap());
        assert_eq!(a, b);
    }
}
