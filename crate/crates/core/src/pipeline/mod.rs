//! End-to-end drivers: training, multi-step inference, AP evaluation and
//! plot data.

pub mod eval;
pub mod infer;
pub mod plots;
pub mod train;

use ndarray::Array2;

use crate::data::Config;
use crate::decoder::{build_bev_features, disc_summary, roi_pool_rotated, roi_summary, DecoderConfig, FeatureGrid, GridConfig, CHANNELS};
use crate::diffusion::BoxNormalizer;
use crate::geometry::{wrap_half_turn, BevBox};

pub use eval::{evaluate_ap, ApCurve, EvalMode, EvalReport};
pub use infer::{detections_only, infer_dataset, run_inference, step_levels, Denoiser, Detector, GtOracle, InferenceOutput, PreparedScene};
pub use plots::{parse_loss_csv, write_loss_csv, write_pr_csv, write_schedule_csv, write_sizes_csv};
pub use train::{run_training, scene_rng, EpochStats, TrainOptions, TrainReport};

/// Class every driver trains on and evaluates.
pub const TARGET_CLASS: &str = "Car";

/// Feature grid for a point cloud.
pub fn scene_grid(points: &[[f64; 3]], grid: &GridConfig) -> FeatureGrid {
    build_bev_features(points, grid)
}

/// Turns proposal boxes into decoder RoI inputs for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiEncoder {
    pub decoder: DecoderConfig,
    pub norm: BoxNormalizer,
    /// Grid floor; pooled heights are measured from here so that empty
    /// cells and low points do not share a value.
    pub z_floor: f64,
    /// Cells whose max height is at or below this are ground for the
    /// footprint statistics.
    pub min_z: f64,
    pub ground_z: f64,
    pub summary_context: f64,
    /// Smallest window side used for the footprint statistics.
    pub min_window: f64,
}

/// Height above the ground plane that makes a cell part of an object.
const ELEVATION: f64 = 0.3;
/// Disc radius and iterations of the footprint mean shift.
const SHIFT_RADIUS: f64 = 3.0;
const SHIFT_ITERS: usize = 3;

impl RoiEncoder {
    pub fn new(cfg: &Config) -> Self {
        Self {
            decoder: cfg.decoder_config(),
            norm: cfg.normalizer(),
            z_floor: cfg.scene.z_min,
            min_z: cfg.scene.ground_z + ELEVATION,
            ground_z: cfg.scene.ground_z,
            summary_context: cfg.decoder.summary_context,
            min_window: 1.0,
        }
    }

    /// One row per box: pooled cells with the density channel as
    /// `ln(1 + count)` and heights relative to the floor, then the
    /// footprint statistics if enabled (offsets in signal units relative to
    /// the box, so a residual can copy them).
    pub fn encode(&self, grid: &FeatureGrid, boxes: &[BevBox]) -> Array2<f64> {
        let dc = &self.decoder;
        let cells = dc.pool * dc.pool * CHANNELS;
        let mut roi = Array2::zeros((boxes.len(), dc.roi_dim()));
        let jac = self.norm.signal_jacobian();
        for (mut row, b) in roi.rows_mut().into_iter().zip(boxes) {
            let out = row.as_slice_mut().expect("row-major");
            roi_pool_rotated(grid, b, dc.pool, dc.roi_context, &mut out[..cells]);
            for cell in out[..cells].chunks_mut(CHANNELS) {
                cell[0] = cell[0].ln_1p();
                cell[1] -= self.z_floor * cell[3];
                cell[2] -= self.z_floor * cell[3];
            }
            if dc.summary {
                let window = BevBox {
                    dx: b.dx.max(self.min_window),
                    dy: b.dy.max(self.min_window),
                    ..*b
                };
                self.summary(grid, &window, &jac, &mut out[cells..]);
            }
        }
        roi
    }

    fn summary(&self, grid: &FeatureGrid, b: &BevBox, jac: &[f64; 5], out: &mut [f64]) {
        out.fill(0.0);
        let first = roi_summary(grid, b, self.summary_context, self.min_z);
        out[0] = first.weight.ln_1p();
        if first.weight == 0.0 {
            return;
        }
        // Re-center a car-sized disc on the elevated mass a few times so the
        // statistics describe whole objects rather than the window's cut.
        let mut s = first;
        for _ in 0..SHIFT_ITERS {
            let next = disc_summary(grid, s.mean, SHIFT_RADIUS, self.min_z);
            if next.weight == 0.0 {
                break;
            }
            s = next;
        }
        let (xx, xy, yy) = s.cov;
        let half_tr = 0.5 * (xx + yy);
        let r = (0.25 * (xx - yy).powi(2) + xy * xy).sqrt();
        let (l1, l2) = (half_tr + r, (half_tr - r).max(0.0));
        let phi = 0.5 * (2.0 * xy).atan2(xx - yy);
        let c2 = grid.cell * grid.cell;
        out[1] = (s.mean.0 - b.cx) / jac[0];
        out[2] = (s.mean.1 - b.cy) / jac[1];
        out[3] = wrap_half_turn(phi - b.theta) / jac[4];
        out[4] = if l1 > 0.0 { (l1 - l2) / (l1 + l2) } else { 0.0 };
        out[5] = ((12.0 * l1 + c2).sqrt() - b.dx) / jac[2];
        out[6] = ((12.0 * l2 + c2).sqrt() - b.dy) / jac[3];
        out[7] = s.max_z - self.ground_z;
        out[8] = s.weight.ln_1p();
    }
}
