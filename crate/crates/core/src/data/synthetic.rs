//! Synthetic LiDAR-like scenes: non-overlapping cars with surface returns
//! that thin out with range, plus uniform ground clutter.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{count_points_in_box, rotated_iou_bev, BevBox, Box3D};

use super::config::Config;
use super::kitti::{difficulty, label_from_box, KittiLabel, RigidTransform};
use super::{GtObject, Scene};

/// Largest BEV IoU allowed between two placed cars.
pub const MAX_PAIR_IOU: f64 = 0.05;
/// Placement attempts per scene before the car count is reduced.
pub const MAX_ATTEMPTS: usize = 1000;
/// Keep centers this far (m) inside the scene range.
const MARGIN: f64 = 3.0;
/// Surface points are drawn this fraction inside each face so recounts
/// never depend on rounding at the boundary.
const INSET: f64 = 0.02;
/// Full point budget applies up to this range (m); beyond it density falls as 1/d².
const NEAR_RANGE: f64 = 10.0;

/// `(mean, sd)` of car length, width and height.
pub const CAR_PRIOR: [(f64, f64); 3] = [(3.9, 0.4), (1.6, 0.1), (1.5, 0.1)];

fn sample_positive<R: Rng + ?Sized>(rng: &mut R, (mean, sd): (f64, f64)) -> f64 {
    Normal::new(mean, sd).expect("valid prior").sample(rng).max(0.1 * mean)
}

/// Occlusion proxy from the number of returns: ≥ 50 → 0, ≥ 20 → 1, else 2.
pub fn occlusion_from_points(n: usize) -> i32 {
    match n {
        n if n >= 50 => 0,
        n if n >= 20 => 1,
        _ => 2,
    }
}

/// KITTI record for a ground-truth object; the occlusion field carries the
/// object's difficulty so that re-reading the file reproduces it.
pub fn label_for_object(o: &GtObject, calib: Option<&RigidTransform>) -> KittiLabel {
    let mut l = label_from_box(&o.class, &o.bbox, None, calib);
    l.occluded = o.difficulty.map_or(3, |d| d as i32);
    l
}

fn place_boxes<R: Rng + ?Sized>(rng: &mut R, cfg: &Config, k: usize) -> Vec<Box3D> {
    let s = &cfg.scene;
    let mut placed: Vec<Box3D> = Vec::with_capacity(k);
    let mut target = k;
    let mut attempts = 0;
    while placed.len() < target {
        if attempts == MAX_ATTEMPTS {
            log::warn!("placed {} of {target} cars after {MAX_ATTEMPTS} attempts", placed.len());
            target = placed.len();
            break;
        }
        attempts += 1;
        let dx = sample_positive(rng, CAR_PRIOR[0]);
        let dy = sample_positive(rng, CAR_PRIOR[1]);
        let dz = sample_positive(rng, CAR_PRIOR[2]);
        let cx = rng.random_range(s.x_min + MARGIN..s.x_max - MARGIN);
        let cy = rng.random_range(s.y_min + MARGIN..s.y_max - MARGIN);
        let theta = rng.random_range(-PI / 2.0..PI / 2.0);
        let b = Box3D::new(BevBox::new(cx, cy, dx, dy, theta), s.ground_z + dz / 2.0, dz);
        if placed.iter().all(|p| rotated_iou_bev(&p.bev, &b.bev) < MAX_PAIR_IOU) {
            placed.push(b);
        }
    }
    placed.truncate(target);
    placed
}

/// Points on the four sides and the roof, area-weighted.
fn surface_points<R: Rng + ?Sized>(rng: &mut R, b: &Box3D, n: usize, out: &mut Vec<[f64; 3]>) {
    let (hx, hy) = (0.5 * b.bev.dx * (1.0 - INSET), 0.5 * b.bev.dy * (1.0 - INSET));
    let (z0, z1) = (b.z_min() + INSET * b.dz, b.z_max() - INSET * b.dz);
    let side_x = b.bev.dx * b.dz;
    let side_y = b.bev.dy * b.dz;
    let top = b.bev.dx * b.bev.dy;
    let total = 2.0 * (side_x + side_y) + top;
    let (s, c) = b.bev.theta.sin_cos();
    for _ in 0..n {
        let pick = rng.random::<f64>() * total;
        let (u, v, z) = if pick < top {
            (rng.random_range(-hx..hx), rng.random_range(-hy..hy), z1)
        } else if pick < top + 2.0 * side_x {
            let sign = if pick < top + side_x { 1.0 } else { -1.0 };
            (rng.random_range(-hx..hx), sign * hy, rng.random_range(z0..z1))
        } else {
            let sign = if pick < top + 2.0 * side_x + side_y { 1.0 } else { -1.0 };
            (sign * hx, rng.random_range(-hy..hy), rng.random_range(z0..z1))
        };
        out.push([b.bev.cx + c * u - s * v, b.bev.cy + s * u + c * v, z]);
    }
}

/// Generate one scene. Every car holds at least `synth.min_points` returns.
pub fn generate_synthetic_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &Config, id: impl Into<String>) -> Scene {
    let k = rng.random_range(1..=cfg.synth.k_max);
    let boxes = place_boxes(rng, cfg, k);
    let mut points = Vec::new();
    for b in &boxes {
        let range = b.bev.cx.hypot(b.bev.cy).max(NEAR_RANGE);
        let n = (cfg.synth.base_points as f64 * (NEAR_RANGE / range).powi(2)).round() as usize;
        surface_points(rng, b, n.max(cfg.synth.min_points), &mut points);
    }
    let s = &cfg.scene;
    for _ in 0..cfg.synth.clutter {
        points.push([
            rng.random_range(s.x_min..s.x_max),
            rng.random_range(s.y_min..s.y_max),
            s.ground_z + rng.random_range(-0.05..0.05),
        ]);
    }
    let objects = boxes
        .into_iter()
        .map(|bbox| {
            let mut label = label_from_box("Car", &bbox, None, None);
            label.occluded = occlusion_from_points(count_points_in_box(&points, &bbox.bev));
            GtObject {
                class: "Car".into(),
                bbox,
                difficulty: difficulty(&label),
            }
        })
        .collect();
    Scene {
        id: id.into(),
        points,
        objects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_scene_is_reproducible() {
        let cfg = Config::default();
        let a = generate_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(9), &cfg, "s");
        let b = generate_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(9), &cfg, "s");
        assert_eq!(a, b);
        assert!((1..=cfg.synth.k_max).contains(&a.objects.len()));
    }

    #[test]
    fn occlusion_levels() {
        assert_eq!(occlusion_from_points(50), 0);
        assert_eq!(occlusion_from_points(49), 1);
        assert_eq!(occlusion_from_points(19), 2);
    }

    #[test]
    fn crowded_scene_still_places_cars() {
        let mut cfg = Config::default();
        cfg.apply("scene.x_max = 7.5\nscene.y_min = -4\nscene.y_max = 4\nsynth.k_max = 40").unwrap();
        let s = generate_synthetic_scene(&mut ChaCha8Rng::seed_from_u64(1), &cfg, "x");
        assert!(!s.objects.is_empty() && s.objects.len() < 40);
    }
}
