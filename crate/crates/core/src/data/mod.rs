//! Scene ingestion: KITTI labels, synthetic LiDAR-like scenes, on-disk
//! dataset layout and configuration.
//!
//! A dataset directory holds `label/<id>.txt` (KITTI label format) and
//! optionally `velodyne/<id>.bin` (little-endian `f32` quadruples
//! `x, y, z, intensity`).

pub mod config;
pub mod kitti;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Detection};

pub use config::{load_config, Config};
pub use kitti::{
    difficulty, emit_kitti_labels, kitti_to_scene_boxes, label_from_box, parse_kitti_labels, Difficulty, KittiLabel,
    RigidTransform,
};
pub use synthetic::generate_synthetic_scene;

pub const LABEL_DIR: &str = "label";
pub const POINT_DIR: &str = "velodyne";

/// Annotated ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class: String,
    pub bbox: Box3D,
    /// `None` when the object is too small, occluded or truncated for every level.
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub id: String,
    pub points: Vec<[f64; 3]>,
    pub objects: Vec<GtObject>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scene points"));
        }
        self.objects.iter().try_for_each(|o| o.bbox.validate())
    }

    /// Build a scene from parsed labels, skipping `DontCare` records.
    pub fn from_labels(id: impl Into<String>, labels: &[KittiLabel], points: Vec<[f64; 3]>, calib: Option<&RigidTransform>) -> Self {
        let kept: Vec<KittiLabel> = labels.iter().filter(|l| !l.is_dont_care()).cloned().collect();
        let boxes = kitti_to_scene_boxes(&kept, calib);
        let objects = kept
            .iter()
            .zip(boxes)
            .map(|(l, bbox)| GtObject {
                class: l.kind.clone(),
                bbox,
                difficulty: difficulty(l),
            })
            .collect();
        Self {
            id: id.into(),
            points,
            objects,
        }
    }
}

/// Read little-endian `f32` quadruples, keeping `x, y, z`.
pub fn read_points(path: &Path) -> Result<Vec<[f64; 3]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: size {} is not a multiple of 16 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]]) as f64;
            [f(0), f(1), f(2)]
        })
        .collect())
}

pub fn write_points(path: &Path, points: &[[f64; 3]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p[0], p[1], p[2], 0.0] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write a scene in dataset layout. Points are stored as `f32`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    let labels_dir = dir.join(LABEL_DIR);
    let points_dir = dir.join(POINT_DIR);
    create_dir(&labels_dir)?;
    create_dir(&points_dir)?;
    let labels: Vec<KittiLabel> = scene
        .objects
        .iter()
        .map(|o| synthetic::label_for_object(o, None))
        .collect();
    let path = labels_dir.join(format!("{}.txt", scene.id));
    fs::write(&path, emit_kitti_labels(&labels)).map_err(|e| Error::io(&path, e))?;
    write_points(&points_dir.join(format!("{}.bin", scene.id)), &scene.points)
}

/// `<id> -> path` for every file with extension `ext` in `dir`, sorted by id.
fn list_ids(dir: &Path, ext: &str) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Directory holding label files: `dir/label` when present, else `dir`.
fn label_root(dir: &Path) -> std::path::PathBuf {
    let nested = dir.join(LABEL_DIR);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn read_labels(path: &Path) -> Result<Vec<KittiLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_labels(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Load every scene of a dataset directory, sorted by id. Missing point
/// files yield empty clouds.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let points_dir = dir.join(POINT_DIR);
    list_ids(&label_root(dir), "txt")?
        .into_iter()
        .map(|(id, path)| {
            let labels = read_labels(&path)?;
            let bin = points_dir.join(format!("{id}.bin"));
            let points = if bin.is_file() { read_points(&bin)? } else { Vec::new() };
            let scene = Scene::from_labels(id, &labels, points, None);
            scene.validate()?;
            Ok(scene)
        })
        .collect()
}

/// Write one KITTI-format detection file per scene id.
pub fn save_detections(dir: &Path, id: &str, dets: &[Detection]) -> Result<()> {
    create_dir(dir)?;
    let labels: Vec<KittiLabel> = dets
        .iter()
        .map(|d| label_from_box(&d.class, &d.bbox, Some(d.score), None))
        .collect();
    let path = dir.join(format!("{id}.txt"));
    fs::write(&path, emit_kitti_labels(&labels)).map_err(|e| Error::io(&path, e))
}

/// Read detection files (labels with scores) keyed by scene id.
pub fn load_detections(dir: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    list_ids(&label_root(dir), "txt")?
        .into_iter()
        .map(|(id, path)| {
            let labels = read_labels(&path)?;
            let boxes = kitti_to_scene_boxes(&labels, None);
            let dets = labels
                .iter()
                .zip(boxes)
                .filter(|(l, _)| !l.is_dont_care())
                .map(|(l, b)| Detection::new(b, l.score.unwrap_or(1.0), l.kind.clone()))
                .collect();
            Ok((id, dets))
        })
        .collect()
}
