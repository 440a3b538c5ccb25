use crate::diffusion::{BoxNormalizer, Signal, MIN_EXTENT};
use crate::error::{Error, Result};
use crate::geometry::{diou_loss_3d_grad, Box3D};

use super::{focal_loss_logit, normalized_l1, Assignment, MatchCostParams};

/// Raw decoder output for one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionOutput {
    pub logit: f64,
    /// Predicted clean box in signal space.
    pub signal: Signal,
    /// `(cz, dz)` in meters.
    pub height: [f64; 2],
}

impl PredictionOutput {
    pub fn to_box(&self, norm: &BoxNormalizer) -> Box3D {
        Box3D::new(
            norm.signal_to_box(&self.signal),
            self.height[0],
            self.height[1].max(MIN_EXTENT),
        )
    }

    pub fn prob(&self) -> f64 {
        super::sigmoid(self.logit)
    }
}

/// Weighted loss terms; `total = cls + reg + iou`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub iou: f64,
    pub total: f64,
    /// Unweighted mean normalized L1 over matched pairs.
    pub l1: f64,
}

/// Gradients of the total loss with respect to each prediction output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub logit: Vec<f64>,
    pub signal: Vec<Signal>,
    pub height: Vec<[f64; 2]>,
}

impl LossGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            logit: vec![0.0; n],
            signal: vec![[0.0; 5]; n],
            height: vec![[0.0; 2]; n],
        }
    }
}

/// Focal classification over every prediction (matched positive, others
/// negative) normalized by the ground-truth count, plus L1 and rotated 3D
/// DIoU averaged over matched pairs.
pub fn training_loss(
    preds: &[PredictionOutput],
    gts: &[Box3D],
    assignment: &Assignment,
    norm: &BoxNormalizer,
    params: &MatchCostParams,
) -> Result<(LossBreakdown, LossGradients)> {
    let n = preds.len();
    let mut grads = LossGradients::zeros(n);
    let target = assignment.target_of(n);
    if assignment.pairs.iter().any(|&(p, g)| p >= n || g >= gts.len()) {
        return Err(Error::InvalidArgument("assignment index out of range".into()));
    }

    let cls_norm = gts.len().max(1) as f64;
    let mut cls = 0.0;
    for (i, pred) in preds.iter().enumerate() {
        let (l, dl) = focal_loss_logit(pred.logit, target[i].is_some(), params.focal_alpha, params.focal_gamma);
        cls += l;
        grads.logit[i] = params.lambda_cls * dl / cls_norm;
    }
    cls *= params.lambda_cls / cls_norm;

    let pairs = assignment.pairs.len();
    let mut l1_sum = 0.0;
    let mut diou_sum = 0.0;
    if pairs > 0 {
        let k = 1.0 / pairs as f64;
        let du_dz = 0.5 / norm.signal_scale;
        let jac = norm.signal_jacobian();
        for &(p, g) in &assignment.pairs {
            let pred = &preds[p];
            let gt = &gts[g];
            let u_pred = norm.from_signal(&pred.signal);
            let u_gt = norm.normalize(&gt.bev)?.coords;
            l1_sum += normalized_l1(&u_pred, &u_gt);
            for d in 0..5 {
                let s = (u_pred[d] - u_gt[d]).signum();
                let s = if u_pred[d] == u_gt[d] { 0.0 } else { s };
                grads.signal[p][d] += params.lambda_reg * k * s * du_dz;
            }

            let pbox = pred.to_box(norm);
            let (l, dm) = diou_loss_3d_grad(&pbox, gt);
            diou_sum += l;
            let w = params.lambda_iou * k;
            // metric order (cx, cy, cz, dx, dy, dz, theta) -> signal (cx, cy, dx, dy, theta)
            let floored_dx = pbox.bev.dx <= MIN_EXTENT;
            let floored_dy = pbox.bev.dy <= MIN_EXTENT;
            grads.signal[p][0] += w * dm[0] * jac[0];
            grads.signal[p][1] += w * dm[1] * jac[1];
            if !floored_dx {
                grads.signal[p][2] += w * dm[3] * jac[2];
            }
            if !floored_dy {
                grads.signal[p][3] += w * dm[4] * jac[3];
            }
            grads.signal[p][4] += w * dm[6] * jac[4];
            grads.height[p][0] += w * dm[2];
            if pred.height[1] > MIN_EXTENT {
                grads.height[p][1] += w * dm[5];
            }
        }
        l1_sum *= k;
        diou_sum *= k;
    }
    let reg = params.lambda_reg * l1_sum;
    let iou = params.lambda_iou * diou_sum;
    let total = cls + reg + iou;
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok((
        LossBreakdown {
            cls,
            reg,
            iou,
            total,
            l1: l1_sum,
        },
        grads,
    ))
}
