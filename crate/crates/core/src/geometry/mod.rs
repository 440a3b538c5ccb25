//! Rotated box geometry: BEV and 3D IoU, rotated DIoU loss, point-in-box
//! counting and rotated non-maximum suppression.
//!
//! Boxes are parameterized as `(cx, cy, dx, dy, theta)` in the BEV plane,
//! with `dx` the extent along the box's own x-axis. All routines accept any
//! yaw; [`BevBox::canonicalize`] only picks a unique representative.

mod nms;
pub mod polygon;
pub mod real;

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use polygon::{clip_convex, signed_area, Point};
use real::{Dual, Real};

pub use nms::{nms_rotated, nms_rotated_indices};

/// Intersections smaller than this (m²) count as empty.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Rotated bird's-eye-view rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBox {
    pub cx: f64,
    pub cy: f64,
    pub dx: f64,
    pub dy: f64,
    pub theta: f64,
}

impl BevBox {
    pub const fn new(cx: f64, cy: f64, dx: f64, dy: f64, theta: f64) -> Self {
        Self {
            cx,
            cy,
            dx,
            dy,
            theta,
        }
    }

    /// Checked constructor: finite fields and strictly positive extents.
    pub fn try_new(cx: f64, cy: f64, dx: f64, dy: f64, theta: f64) -> Result<Self> {
        let b = Self::new(cx, cy, dx, dy, theta);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.dx <= 0.0 || self.dy <= 0.0 {
            return Err(Error::InvalidBox(format!("non-positive extent in {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.dx, self.dy, self.theta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Same point set with yaw folded into `[-pi/2, pi/2)`.
    ///
    /// A rectangle is symmetric under a half turn, so folding by `pi` never
    /// exchanges the roles of `dx` and `dy`.
    pub fn canonicalize(&self) -> Self {
        Self {
            theta: wrap_half_turn(self.theta),
            ..*self
        }
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        corners(&self.to_array())
    }

    /// Radius of the circumscribed circle.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.dx.hypot(self.dy)
    }

    /// Rigid motion: rotate about the origin by `angle`, then translate.
    pub fn transformed(&self, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            cx: c * self.cx - s * self.cy + tx,
            cy: s * self.cx + c * self.cy + ty,
            theta: self.theta + angle,
            ..*self
        }
    }
}

/// Fold an angle into `[-pi/2, pi/2)`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = (theta + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if t >= PI / 2.0 {
        t -= PI;
    }
    t
}

/// BEV box extended with vertical center and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub bev: BevBox,
    pub cz: f64,
    pub dz: f64,
}

impl Box3D {
    pub const fn new(bev: BevBox, cz: f64, dz: f64) -> Self {
        Self { bev, cz, dz }
    }

    pub fn validate(&self) -> Result<()> {
        self.bev.validate()?;
        if !self.cz.is_finite() || !self.dz.is_finite() || self.dz <= 0.0 {
            return Err(Error::InvalidBox(format!("bad vertical extent in {self:?}")));
        }
        Ok(())
    }

    /// `(cx, cy, cz, dx, dy, dz, theta)`.
    pub fn to_array(&self) -> [f64; 7] {
        let b = &self.bev;
        [b.cx, b.cy, self.cz, b.dx, b.dy, self.dz, b.theta]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self::new(BevBox::new(a[0], a[1], a[3], a[4], a[6]), a[2], a[5])
    }

    pub fn volume(&self) -> f64 {
        self.bev.area() * self.dz
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.dz
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.dz
    }
}

/// Scored, classified 3D box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
    pub class: String,
}

impl Detection {
    pub fn new(bbox: Box3D, score: f64, class: impl Into<String>) -> Self {
        Self {
            bbox,
            score,
            class: class.into(),
        }
    }
}

fn corners<T: Real>(p: &[T; 5]) -> [Point<T>; 4] {
    let [cx, cy, dx, dy, theta] = *p;
    let (s, c) = (theta.sin(), theta.cos());
    let hx = dx.scale(0.5);
    let hy = dy.scale(0.5);
    let local = [(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)];
    local.map(|(u, v)| [cx + c * u - s * v, cy + s * u + c * v])
}

fn bev_intersection<T: Real>(a: &[T; 5], b: &[T; 5]) -> T {
    let ra = 0.5 * a[2].value().hypot(a[3].value());
    let rb = 0.5 * b[2].value().hypot(b[3].value());
    let dist = (a[0].value() - b[0].value()).hypot(a[1].value() - b[1].value());
    if dist > ra + rb {
        return T::zero();
    }
    let poly = clip_convex(&corners(a), &corners(b));
    let area = signed_area(&poly);
    if area.value() < DEGENERATE_AREA {
        T::zero()
    } else {
        area
    }
}

fn total_order(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Intersection area of two BEV boxes; argument order does not affect the
/// result bit-for-bit.
pub fn bev_intersection_area(a: &BevBox, b: &BevBox) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    if total_order(&a, &b) == Ordering::Greater {
        bev_intersection(&b, &a)
    } else {
        bev_intersection(&a, &b)
    }
}

/// Same rectangle up to rounding noise, heading taken modulo a half turn.
/// Clipping a polygon against itself loses ulps (and its derivatives blow
/// up), so callers treat this case as IoU = 1 exactly.
fn coincident(a: &[f64; 5], b: &[f64; 5]) -> bool {
    const TOL: f64 = 1e-12;
    let close = |x: f64, y: f64| (x - y).abs() <= TOL * x.abs().max(y.abs()).max(1.0);
    a[2] > 0.0
        && a[3] > 0.0
        && (0..4).all(|k| close(a[k], b[k]))
        && wrap_half_turn(a[4] - b[4]).abs() <= TOL
}

/// Rotated BEV intersection-over-union in `[0, 1]`.
pub fn rotated_iou_bev(a: &BevBox, b: &BevBox) -> f64 {
    if coincident(&a.to_array(), &b.to_array()) {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn vertical_overlap<T: Real>(cz_a: T, dz_a: T, cz_b: T, dz_b: T) -> T {
    let top = (cz_a + dz_a.scale(0.5)).min(cz_b + dz_b.scale(0.5));
    let bottom = (cz_a - dz_a.scale(0.5)).max(cz_b - dz_b.scale(0.5));
    (top - bottom).max(T::zero())
}

/// 3D intersection-over-union of two yaw-rotated boxes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a.dz > 0.0 && (a.cz, a.dz) == (b.cz, b.dz) && coincident(&a.bev.to_array(), &b.bev.to_array()) {
        return 1.0;
    }
    let h = vertical_overlap(a.cz, a.dz, b.cz, b.dz);
    if h <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(&a.bev, &b.bev) * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `(cx, cy, cz, dx, dy, dz, theta)` ordering used by the generic routines.
fn diou_loss_generic<T: Real>(p: &[T; 7], g: &[T; 7]) -> T {
    let pb = [p[0], p[1], p[3], p[4], p[6]];
    let gb = [g[0], g[1], g[3], g[4], g[6]];
    let h = vertical_overlap(p[2], p[5], g[2], g[5]);
    let inter = if h.value() > 0.0 {
        bev_intersection(&pb, &gb) * h
    } else {
        T::zero()
    };
    let vol_p = p[3] * p[4] * p[5];
    let vol_g = g[3] * g[4] * g[5];
    let union = vol_p + vol_g - inter;
    let same = p[5].value() > 0.0
        && (p[2].value(), p[5].value()) == (g[2].value(), g[5].value())
        && coincident(&pb.map(|v| v.value()), &gb.map(|v| v.value()));
    // at coincidence the IoU sits on its maximum (a kink): subgradient zero
    let iou = if same {
        T::constant(1.0)
    } else if union.value() > 0.0 && inter.value() > 0.0 {
        inter / union
    } else {
        T::zero()
    };

    let d = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
    let rho2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];

    let mut lo = [T::constant(f64::INFINITY); 3];
    let mut hi = [T::constant(f64::NEG_INFINITY); 3];
    for (bev, cz, dz) in [(&pb, p[2], p[5]), (&gb, g[2], g[5])] {
        for c in corners(bev) {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        lo[2] = lo[2].min(cz - dz.scale(0.5));
        hi[2] = hi[2].max(cz + dz.scale(0.5));
    }
    let e = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let c2 = e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
    let penalty = if c2.value() > 0.0 { rho2 / c2 } else { T::zero() };
    T::constant(1.0) - iou + penalty
}

/// Rotated 3D DIoU loss `1 - IoU3D + rho^2 / c^2`, where `rho` is the center
/// distance and `c` the diagonal of the axis-aligned box enclosing all 16
/// corners.
pub fn diou_loss_3d(pred: &Box3D, gt: &Box3D) -> f64 {
    diou_loss_generic(&pred.to_array(), &gt.to_array())
}

/// DIoU loss and its gradient with respect to the predicted box in
/// `(cx, cy, cz, dx, dy, dz, theta)` order.
pub fn diou_loss_3d_grad(pred: &Box3D, gt: &Box3D) -> (f64, [f64; 7]) {
    let pa = pred.to_array();
    let p: [Dual<7>; 7] = std::array::from_fn(|i| Dual::variable(pa[i], i));
    let g = gt.to_array().map(Dual::<7>::constant);
    let l = diou_loss_generic(&p, &g);
    (l.re, l.eps)
}

/// Points inside or on the boundary of the rotated rectangle.
pub fn count_points_in_box<P: AsRef<[f64]>>(points: &[P], bbox: &BevBox) -> usize {
    const TOL: f64 = 1e-9;
    let c = bbox.corners();
    // Unit edge directions; the cross product with an edge is then a signed
    // distance to that edge's supporting line.
    let edges: [([f64; 2], [f64; 2]); 4] = std::array::from_fn(|k| {
        let a = c[k];
        let b = c[(k + 1) % 4];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let n = ex.hypot(ey);
        (a, [ex / n, ey / n])
    });
    let r = bbox.circumradius() + TOL;
    points
        .iter()
        .filter(|p| {
            let p = p.as_ref();
            let (x, y) = (p[0], p[1]);
            if (x - bbox.cx).abs() > r || (y - bbox.cy).abs() > r {
                return false;
            }
            edges
                .iter()
                .all(|(a, e)| e[0] * (y - a[1]) - e[1] * (x - a[0]) >= -TOL)
        })
        .count()
}
