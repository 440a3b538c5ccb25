//! BEV statistics grid and rotated RoI pooling.

use crate::error::{Error, Result};
use crate::geometry::BevBox;

/// Channels per cell: point count, max z, mean z, occupancy.
pub const CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub cell: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_range: (0.0, 70.4),
            y_range: (-40.0, 40.0),
            z_range: (-3.0, 1.0),
            cell: 0.4,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0
            && self.x_range.1 > self.x_range.0
            && self.y_range.1 > self.y_range.0
            && self.z_range.1 > self.z_range.0)
        {
            return Err(Error::InvalidArgument(format!("bad grid config {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        ((self.x_range.1 - self.x_range.0) / self.cell - 1e-9).ceil() as usize
    }

    pub fn height(&self) -> usize {
        ((self.y_range.1 - self.y_range.0) / self.cell - 1e-9).ceil() as usize
    }
}

/// Row-major `height x width x CHANNELS` grid; row index follows y.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub cell: f64,
    pub origin: (f64, f64),
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(width: usize, height: usize, cell: f64, origin: (f64, f64)) -> Self {
        Self {
            width,
            height,
            cell,
            origin,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * CHANNELS;
        &self.data[o..o + CHANNELS]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = (row * self.width + col) * CHANNELS;
        &mut self.data[o..o + CHANNELS]
    }

    /// Sum of the density channel.
    pub fn total_density(&self) -> f64 {
        self.data.chunks(CHANNELS).map(|c| c[0]).sum()
    }

    /// Bilinear sample with cell centers at integer lattice positions;
    /// neighbors outside the grid contribute zero.
    pub fn sample(&self, x: f64, y: f64, out: &mut [f64]) {
        out.fill(0.0);
        let gx = (x - self.origin.0) / self.cell - 0.5;
        let gy = (y - self.origin.1) / self.cell - 0.5;
        if !(gx > -1.0 && gy > -1.0 && gx < self.width as f64 && gy < self.height as f64) {
            return;
        }
        let (x0, y0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - x0, gy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let r = y0 + dy;
            if r < 0 || r >= self.height as isize || wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let c = x0 + dx;
                if c < 0 || c >= self.width as isize || wx == 0.0 {
                    continue;
                }
                let w = wx * wy;
                for (o, v) in out.iter_mut().zip(self.at(r as usize, c as usize)) {
                    *o += w * v;
                }
            }
        }
    }
}

/// Per-cell statistics over the points inside the configured ranges.
pub fn build_bev_features<P: AsRef<[f64]>>(points: &[P], cfg: &GridConfig) -> FeatureGrid {
    let (w, h) = (cfg.width(), cfg.height());
    let mut grid = FeatureGrid::zeros(w, h, cfg.cell, (cfg.x_range.0, cfg.y_range.0));
    let mut sum_z = vec![0.0; w * h];
    for p in points {
        let p = p.as_ref();
        let (x, y, z) = (p[0], p[1], p[2]);
        if !(x >= cfg.x_range.0
            && x < cfg.x_range.1
            && y >= cfg.y_range.0
            && y < cfg.y_range.1
            && z >= cfg.z_range.0
            && z < cfg.z_range.1)
        {
            continue;
        }
        let col = (((x - cfg.x_range.0) / cfg.cell) as usize).min(w - 1);
        let row = (((y - cfg.y_range.0) / cfg.cell) as usize).min(h - 1);
        let cell = grid.at_mut(row, col);
        if cell[0] == 0.0 || z > cell[1] {
            cell[1] = z;
        }
        cell[0] += 1.0;
        cell[3] = 1.0;
        sum_z[row * w + col] += z;
    }
    for (k, s) in sum_z.iter().enumerate() {
        let cell = &mut grid.data[k * CHANNELS..(k + 1) * CHANNELS];
        if cell[0] > 0.0 {
            cell[2] = s / cell[0];
        }
    }
    grid
}

/// `S x S x CHANNELS` bilinear samples on a lattice spanning the box
/// (scaled by `context`) in its own frame. Row index follows the box's
/// local y-axis.
pub fn roi_pool_rotated(grid: &FeatureGrid, bbox: &BevBox, size: usize, context: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), size * size * CHANNELS);
    let b = bbox.canonicalize();
    let (s, c) = b.theta.sin_cos();
    let (ex, ey) = (b.dx * context, b.dy * context);
    for j in 0..size {
        let v = ((j as f64 + 0.5) / size as f64 - 0.5) * ey;
        for i in 0..size {
            let u = ((i as f64 + 0.5) / size as f64 - 0.5) * ex;
            let x = b.cx + c * u - s * v;
            let y = b.cy + s * u + c * v;
            let o = (j * size + i) * CHANNELS;
            grid.sample(x, y, &mut out[o..o + CHANNELS]);
        }
    }
}

/// Weighted footprint statistics of the cells whose centers fall inside
/// `bbox` scaled by `context`. A cell counts with weight 1 when it holds
/// points and its max height exceeds `min_z`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoiSummary {
    pub weight: f64,
    pub mean: (f64, f64),
    /// `(xx, xy, yy)` second central moments of cell centers.
    pub cov: (f64, f64, f64),
    /// Highest point among counted cells.
    pub max_z: f64,
}

pub fn roi_summary(grid: &FeatureGrid, bbox: &BevBox, context: f64, min_z: f64) -> RoiSummary {
    let (s, c) = bbox.theta.sin_cos();
    let (hx, hy) = (0.5 * bbox.dx * context, 0.5 * bbox.dy * context);
    let ex = hx * c.abs() + hy * s.abs();
    let ey = hx * s.abs() + hy * c.abs();
    summarize(grid, (bbox.cx, bbox.cy), (ex, ey), min_z, |px, py| {
        (c * px + s * py).abs() <= hx && (-s * px + c * py).abs() <= hy
    })
}

/// [`roi_summary`] over a disc.
pub fn disc_summary(grid: &FeatureGrid, center: (f64, f64), radius: f64, min_z: f64) -> RoiSummary {
    let r2 = radius * radius;
    summarize(grid, center, (radius, radius), min_z, |px, py| px * px + py * py <= r2)
}

/// Statistics of elevated cells within `extent` of `center` that pass
/// `inside` (offsets from the center).
fn summarize(
    grid: &FeatureGrid,
    center: (f64, f64),
    extent: (f64, f64),
    min_z: f64,
    inside: impl Fn(f64, f64) -> bool,
) -> RoiSummary {
    let cell = grid.cell;
    let col = |x: f64| ((x - grid.origin.0) / cell).floor();
    let row = |y: f64| ((y - grid.origin.1) / cell).floor();
    let c0 = col(center.0 - extent.0).max(0.0);
    let c1 = col(center.0 + extent.0).min(grid.width as f64 - 1.0);
    let r0 = row(center.1 - extent.1).max(0.0);
    let r1 = row(center.1 + extent.1).min(grid.height as f64 - 1.0);
    let mut out = RoiSummary::default();
    if c1 < c0 || r1 < r0 {
        return out;
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut top = f64::NEG_INFINITY;
    for r in r0 as usize..=r1 as usize {
        let py = grid.origin.1 + (r as f64 + 0.5) * cell - center.1;
        for k in c0 as usize..=c1 as usize {
            let v = grid.at(r, k);
            if v[0] == 0.0 || v[1] <= min_z {
                continue;
            }
            let px = grid.origin.0 + (k as f64 + 0.5) * cell - center.0;
            if !inside(px, py) {
                continue;
            }
            out.weight += 1.0;
            sx += px;
            sy += py;
            sxx += px * px;
            sxy += px * py;
            syy += py * py;
            top = top.max(v[1]);
        }
    }
    if out.weight > 0.0 {
        let w = out.weight;
        let (mx, my) = (sx / w, sy / w);
        out.mean = (center.0 + mx, center.1 + my);
        out.cov = (sxx / w - mx * mx, sxy / w - mx * my, syy / w - my * my);
        out.max_z = top;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let pts: Vec<[f64; 3]> = vec![];
        let g = build_bev_features(&pts, &GridConfig::default());
        assert_eq!((g.width, g.height), (176, 200));
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_cell() {
        let g = build_bev_features(&[[10.1, 0.3, -0.7]], &GridConfig::default());
        let nz: Vec<usize> = (0..g.width * g.height)
            .filter(|&k| g.data[k * CHANNELS] != 0.0)
            .collect();
        assert_eq!(nz.len(), 1);
        let cell = &g.data[nz[0] * CHANNELS..nz[0] * CHANNELS + CHANNELS];
        assert_eq!(cell, &[1.0, -0.7, -0.7, 1.0]);
    }

    #[test]
    fn out_of_range_points_dropped() {
        let pts = [[-1.0, 0.0, 0.0], [10.0, 50.0, 0.0], [10.0, 0.0, 5.0], [10.0, 0.0, 0.0]];
        let g = build_bev_features(&pts, &GridConfig::default());
        assert_eq!(g.total_density(), 1.0);
    }

    #[test]
    fn constant_grid_pools_constant() {
        let mut g = FeatureGrid::zeros(40, 40, 0.5, (0.0, 0.0));
        for k in 0..40 * 40 {
            g.data[k * CHANNELS..(k + 1) * CHANNELS].copy_from_slice(&[2.0, -1.0, 0.5, 1.0]);
        }
        let mut out = vec![0.0; 7 * 7 * CHANNELS];
        roi_pool_rotated(&g, &BevBox::new(10.0, 9.0, 4.0, 2.0, 0.7), 7, 1.0, &mut out);
        for c in out.chunks(CHANNELS) {
            for (a, b) in c.iter().zip([2.0, -1.0, 0.5, 1.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn summary_of_filled_rectangle() {
        // Elevated cells covering x in [10, 14), y in [-0.8, 1.2).
        let mut pts = vec![];
        for i in 0..10 {
            for j in 0..5 {
                pts.push([10.2 + 0.4 * i as f64, -0.6 + 0.4 * j as f64, -0.5]);
            }
        }
        pts.push([12.0, 0.0, -1.7]);
        let g = build_bev_features(&pts, &GridConfig::default());
        let s = roi_summary(&g, &BevBox::new(12.5, 0.5, 6.0, 4.0, 0.0), 1.0, -1.4);
        assert_eq!(s.weight, 50.0);
        assert!((s.mean.0 - 12.0).abs() < 1e-9 && (s.mean.1 - 0.2).abs() < 1e-9);
        // Variance of an evenly spaced lattice: (n^2 - 1) / 12 * spacing^2.
        assert!((s.cov.0 - 99.0 / 12.0 * 0.16).abs() < 1e-9);
        assert!((s.cov.2 - 24.0 / 12.0 * 0.16).abs() < 1e-9);
        assert!(s.cov.1.abs() < 1e-9);
        assert_eq!(s.max_z, -0.5);
        let far = roi_summary(&g, &BevBox::new(40.0, 20.0, 4.0, 2.0, 0.3), 1.0, -1.4);
        assert_eq!(far, RoiSummary::default());
        let disc = disc_summary(&g, (12.0, 0.2), 1.5, -1.4);
        assert!(disc.weight < 50.0 && (disc.mean.0 - 12.0).abs() < 1e-9);
        let all = disc_summary(&g, (12.0, 0.2), 10.0, -1.4);
        assert_eq!(all.weight, 50.0);
        assert!((all.cov.0 - s.cov.0).abs() < 1e-9 && (all.mean.1 - 0.2).abs() < 1e-9);
    }

    #[test]
    fn half_turn_pools_identically() {
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|i| {
                let f = i as f64;
                [10.0 + (f * 0.37).sin() * 3.0, (f * 0.11).cos() * 3.0, -1.0 + (f * 0.05).sin()]
            })
            .collect();
        let g = build_bev_features(&pts, &GridConfig::default());
        let b0 = BevBox::new(10.0, 0.5, 4.0, 2.0, 0.3);
        let b1 = BevBox::new(10.0, 0.5, 4.0, 2.0, 0.3 + std::f64::consts::PI);
        let mut o0 = vec![0.0; 7 * 7 * CHANNELS];
        let mut o1 = o0.clone();
        roi_pool_rotated(&g, &b0, 7, 1.0, &mut o0);
        roi_pool_rotated(&g, &b1, 7, 1.0, &mut o1);
        for (a, b) in o0.iter().zip(&o1) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
