//! Set-prediction training machinery: focal loss, the composite matching
//! cost, optimal assignment and the matched-pair training loss.

mod hungarian;
mod loss;

use ndarray::Array2;

use crate::diffusion::BoxNormalizer;
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou_bev, BevBox, Detection};

pub use hungarian::{hungarian, Assignment};
pub use loss::{training_loss, LossBreakdown, LossGradients, PredictionOutput};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

/// Weights shared by the matching cost and the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCostParams {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_iou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for MatchCostParams {
    fn default() -> Self {
        Self {
            lambda_cls: 2.0,
            lambda_reg: 5.0,
            lambda_iou: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl MatchCostParams {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_cls, self.lambda_reg, self.lambda_iou];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return Err(Error::InvalidArgument("focal alpha in [0,1], gamma >= 0".into()));
        }
        Ok(())
    }
}

/// Binary focal loss for probability `prob` of the positive class.
pub fn focal_loss(prob: f64, is_positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if is_positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Focal loss and its derivative with respect to the logit `z`, `p = sigmoid(z)`.
pub fn focal_loss_logit(logit: f64, is_positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let raw = sigmoid(logit);
    let p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = focal_loss(p, is_positive, alpha, gamma);
    if p != raw {
        return (loss, 0.0);
    }
    let dl_dp = if is_positive {
        alpha * (gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - (1.0 - p).powf(gamma) / p)
    } else {
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() - p.powf(gamma) / (1.0 - p))
    };
    (loss, dl_dp * p * (1.0 - p))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L1 distance between two boxes in normalized `[0, 1]^5` coordinates.
pub fn normalized_l1(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `N x M` cost: `l_cls * focal(p_i, +) + l_reg * L1(u_i, u_j) + l_iou * (1 - IoU_bev(i, j))`.
pub fn match_cost_matrix(
    preds: &[Detection],
    gts: &[BevBox],
    norm: &BoxNormalizer,
    params: &MatchCostParams,
) -> Result<Array2<f64>> {
    if preds.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite("prediction score"));
    }
    let pred_u = preds
        .iter()
        .map(|d| Ok(norm.normalize(&d.bbox.bev)?.coords))
        .collect::<Result<Vec<_>>>()?;
    let gt_u = gts
        .iter()
        .map(|g| Ok(norm.normalize(g)?.coords))
        .collect::<Result<Vec<_>>>()?;
    let mut cost = Array2::zeros((preds.len(), gts.len()));
    for (i, d) in preds.iter().enumerate() {
        let cls = params.lambda_cls
            * focal_loss(d.score, true, params.focal_alpha, params.focal_gamma);
        for (j, g) in gts.iter().enumerate() {
            let reg = params.lambda_reg * normalized_l1(&pred_u[i], &gt_u[j]);
            let iou = params.lambda_iou * (1.0 - rotated_iou_bev(&d.bbox.bev, g));
            let c = cls + reg + iou;
            if !c.is_finite() {
                return Err(Error::NonFinite("matching cost"));
            }
            cost[[i, j]] = c;
        }
    }
    Ok(cost)
}
