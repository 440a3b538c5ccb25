//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.

#![allow(dead_code)]

pub mod gradcheck;

use std::f64::consts::PI;

use boxdiff_core::geometry::{BevBox, Box3D};
use rand::seq::SliceRandom;
use rand::Rng;

/// Point-in-rectangle via the box's local frame (inclusive).
pub fn inside_local(b: &BevBox, x: f64, y: f64) -> bool {
    let (s, c) = b.theta.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= 0.5 * b.dx && v.abs() <= 0.5 * b.dy
}

fn aabb(b: &BevBox) -> [f64; 4] {
    let (s, c) = b.theta.sin_cos();
    let hx = 0.5 * (b.dx * c.abs() + b.dy * s.abs());
    let hy = 0.5 * (b.dx * s.abs() + b.dy * c.abs());
    [b.cx - hx, b.cx + hx, b.cy - hy, b.cy + hy]
}

/// Intersection area by jittered-grid Monte Carlo with `k x k` strata over
/// the overlap of the two boxes' axis-aligned bounds.
pub fn mc_intersection<R: Rng + ?Sized>(a: &BevBox, b: &BevBox, k: usize, rng: &mut R) -> f64 {
    let (ra, rb) = (aabb(a), aabb(b));
    let (x0, x1) = (ra[0].max(rb[0]), ra[1].min(rb[1]));
    let (y0, y1) = (ra[2].max(rb[2]), ra[3].min(rb[3]));
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let (wx, wy) = ((x1 - x0) / k as f64, (y1 - y0) / k as f64);
    let mut hits = 0usize;
    for i in 0..k {
        for j in 0..k {
            let x = x0 + (i as f64 + rng.random::<f64>()) * wx;
            let y = y0 + (j as f64 + rng.random::<f64>()) * wy;
            if inside_local(a, x, y) && inside_local(b, x, y) {
                hits += 1;
            }
        }
    }
    hits as f64 / (k * k) as f64 * (x1 - x0) * (y1 - y0)
}

pub fn mc_iou_bev<R: Rng + ?Sized>(a: &BevBox, b: &BevBox, k: usize, rng: &mut R) -> f64 {
    let inter = mc_intersection(a, b, k, rng);
    inter / (a.area() + b.area() - inter)
}

/// 3D IoU by Monte Carlo: a `k x k` jittered grid in the plane, each sample
/// paired with its own height stratum (shuffled, Latin-hypercube style).
pub fn mc_iou_3d<R: Rng + ?Sized>(a: &Box3D, b: &Box3D, k: usize, rng: &mut R) -> f64 {
    let (ra, rb) = (aabb(&a.bev), aabb(&b.bev));
    let lo = [ra[0].max(rb[0]), ra[2].max(rb[2]), a.z_min().max(b.z_min())];
    let hi = [ra[1].min(rb[1]), ra[3].min(rb[3]), a.z_max().min(b.z_max())];
    if (0..3).any(|d| hi[d] <= lo[d]) {
        return 0.0;
    }
    let n = k * k;
    let mut z_strata: Vec<usize> = (0..n).collect();
    z_strata.shuffle(rng);
    let (wx, wy, wz) = ((hi[0] - lo[0]) / k as f64, (hi[1] - lo[1]) / k as f64, (hi[2] - lo[2]) / n as f64);
    let mut hits = 0usize;
    for i in 0..k {
        for j in 0..k {
            let x = lo[0] + (i as f64 + rng.random::<f64>()) * wx;
            let y = lo[1] + (j as f64 + rng.random::<f64>()) * wy;
            let z = lo[2] + (z_strata[i * k + j] as f64 + rng.random::<f64>()) * wz;
            let in_z = |q: &Box3D| z >= q.z_min() && z <= q.z_max();
            if in_z(a) && in_z(b) && inside_local(&a.bev, x, y) && inside_local(&b.bev, x, y) {
                hits += 1;
            }
        }
    }
    let inter = hits as f64 / n as f64 * (0..3).map(|d| hi[d] - lo[d]).product::<f64>();
    inter / (a.volume() + b.volume() - inter)
}

/// Random box, with its partner drawn nearby so overlaps are common.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> (Box3D, Box3D) {
    let mk = |rng: &mut R, cx: f64, cy: f64, cz: f64| {
        Box3D::new(
            BevBox::new(
                cx,
                cy,
                rng.random_range(0.3..5.0),
                rng.random_range(0.3..5.0),
                rng.random_range(-PI..PI),
            ),
            cz,
            rng.random_range(0.3..3.0),
        )
    };
    let (cx, cy, cz) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..1.0));
    let a = mk(rng, cx, cy, cz);
    let b = match rng.random_range(0..10) {
        0 => a,
        1 => Box3D::new(BevBox { theta: a.bev.theta + PI, ..a.bev }, a.cz, a.dz),
        _ => {
            let cx = a.bev.cx + rng.random_range(-3.0..3.0);
            let cy = a.bev.cy + rng.random_range(-3.0..3.0);
            let cz = a.cz + rng.random_range(-1.5..1.5);
            mk(rng, cx, cy, cz)
        }
    };
    (a, b)
}

/// Reference NMS: repeatedly keep the best remaining box and drop all
/// remaining boxes overlapping it beyond `thr`.
pub fn naive_nms(boxes: &[BevBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if scores[i] > scores[best] || (scores[i] == scores[best] && i < best) {
                best = i;
            }
        }
        keep.push(best);
        alive.retain(|&i| i != best && boxes_iou(&boxes[best], &boxes[i]) <= thr);
    }
    keep
}

fn boxes_iou(a: &BevBox, b: &BevBox) -> f64 {
    boxdiff_core::geometry::rotated_iou_bev(a, b)
}

/// Minimum total cost over all injective maps of columns into rows.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    fn go(col: usize, m: usize, used: &mut Vec<bool>, cost: &[Vec<f64>], acc: f64, best: &mut f64) {
        if col == m {
            *best = best.min(acc);
            return;
        }
        for r in 0..used.len() {
            if !used[r] {
                used[r] = true;
                go(col + 1, m, used, cost, acc + cost[r][col], best);
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, m, &mut vec![false; n], cost, 0.0, &mut best);
    if m == 0 {
        0.0
    } else {
        best
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}