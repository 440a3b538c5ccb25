//! KITTI label files and the camera-to-BEV mapping.
//!
//! Camera frame: `x` right, `y` down, `z` forward; `location` is the bottom
//! center of the box. The BEV frame used everywhere else is
//!
//! ```text
//! cx = z_cam      cy = -x_cam      cz = -y_cam + h / 2
//! dx = l          dy = w           dz = h
//! theta = -rotation_y - pi/2       (folded into [-pi/2, pi/2))
//! ```
//!
//! An optional [`RigidTransform`] is then applied in the BEV frame.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{wrap_half_turn, BevBox, Box3D};

/// One record of a KITTI label (or detection) file.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `left, top, right, bottom` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom center `(x, y, z)` in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.kind == "DontCare"
    }
}

/// Rigid motion in the BEV frame: yaw about the vertical axis, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn apply(&self, b: &Box3D) -> Box3D {
        let [tx, ty, tz] = self.translation;
        Box3D::new(b.bev.transformed(self.yaw, tx, ty), b.cz + tz, b.dz)
    }

    pub fn inverse(&self) -> Self {
        let [tx, ty, tz] = self.translation;
        let (s, c) = (-self.yaw).sin_cos();
        Self {
            yaw: -self.yaw,
            translation: [-(c * tx - s * ty), -(s * tx + c * ty), -tz],
        }
    }
}

/// Parse a label file. Blank lines are skipped; line numbers are 1-based.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

fn parse_line(line: &str, lineno: usize) -> Result<KittiLabel> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected 15 or 16 fields, found {}", f.len()),
        });
    }
    let num = |k: usize| -> Result<f64> {
        f[k].parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("field {} (`{}`) is not a finite number", k + 1, f[k]),
            })
    };
    let occluded = f[2].parse::<i32>().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("field 3 (`{}`) is not an integer", f[2]),
    })?;
    Ok(KittiLabel {
        kind: f[0].to_string(),
        truncated: num(1)?,
        occluded,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if f.len() == 16 { Some(num(15)?) } else { None },
    })
}

/// Emit records with four decimals (two for `truncated`/pixel values is the
/// dataset's habit; four keeps box round trips within 1e-4).
pub fn emit_kitti_labels(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let _ = write!(
            out,
            "{} {:.4} {} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            l.kind,
            l.truncated,
            l.occluded,
            l.alpha,
            l.bbox[0],
            l.bbox[1],
            l.bbox[2],
            l.bbox[3],
            l.dimensions[0],
            l.dimensions[1],
            l.dimensions[2],
            l.location[0],
            l.location[1],
            l.location[2],
            l.rotation_y
        );
        if let Some(s) = l.score {
            let _ = write!(out, " {s:.4}");
        }
        out.push('\n');
    }
    out
}

/// Map labels into the BEV frame (see module docs).
pub fn kitti_to_scene_boxes(labels: &[KittiLabel], calib: Option<&RigidTransform>) -> Vec<Box3D> {
    labels
        .iter()
        .map(|l| {
            let [h, w, len] = l.dimensions;
            let [x, y, z] = l.location;
            let b = Box3D::new(
                BevBox::new(z, -x, len, w, wrap_half_turn(-l.rotation_y - PI / 2.0)),
                -y + h / 2.0,
                h,
            );
            calib.map_or(b, |c| c.apply(&b))
        })
        .collect()
}

fn wrap_pi(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Inverse mapping of [`kitti_to_scene_boxes`] for one box. `calib` is the
/// transform that was applied on the way in.
pub fn label_from_box(kind: &str, b: &Box3D, score: Option<f64>, calib: Option<&RigidTransform>) -> KittiLabel {
    let b = calib.map_or(*b, |c| c.inverse().apply(b));
    let (x, y, z) = (-b.bev.cy, b.dz / 2.0 - b.cz, b.bev.cx);
    let rotation_y = wrap_pi(-b.bev.theta - PI / 2.0);
    KittiLabel {
        kind: kind.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: wrap_pi(rotation_y - x.atan2(z)),
        bbox: [0.0, 0.0, 100.0, 100.0],
        dimensions: [b.dz, b.bev.dy, b.bev.dx],
        location: [x, y, z],
        rotation_y,
        score,
    }
}

/// KITTI evaluation levels. A ground truth counted at one level also counts
/// at every harder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Moderate => "moderate",
            Self::Hard => "hard",
        }
    }
}

/// Easiest level whose thresholds the label meets: image height
/// ≥ 40/25/25 px, occlusion ≤ 0/1/2, truncation ≤ 0.15/0.30/0.50.
pub fn difficulty(l: &KittiLabel) -> Option<Difficulty> {
    let height = l.bbox[3] - l.bbox[1];
    let limits = [(40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50)];
    Difficulty::ALL
        .into_iter()
        .zip(limits)
        .find(|(_, (h, occ, trunc))| height >= *h && l.occluded <= *occ && l.truncated <= *trunc)
        .map(|(d, _)| d)
}
