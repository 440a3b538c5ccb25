//! KITTI-style average precision.
//!
//! Per scene and difficulty level, detections are visited by descending
//! score and matched greedily to the unmatched valid ground truth with the
//! highest IoU at or above the threshold. Detections that instead overlap a
//! ground truth outside the level (or a neighbouring class such as `Van`)
//! are ignored rather than counted as false positives.
//!
//! Precision is interpolated as the maximum precision at any recall ≥ r and
//! averaged over `{0, 0.1, ..., 1}` (11 positions, including r = 0) or
//! `{1/40, ..., 1}` (40 positions). A level without ground truth scores 0.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::data::{Difficulty, Scene};
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, rotated_iou_bev, Box3D, Detection};

use super::TARGET_CLASS;

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Bev,
    ThreeD,
}

impl EvalMode {
    fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Self::Bev => rotated_iou_bev(&a.bev, &b.bev),
            Self::ThreeD => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bev => "bev",
            Self::ThreeD => "3d",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(Self::Bev),
            "3d" => Ok(Self::ThreeD),
            other => Err(Error::InvalidArgument(format!("unknown eval mode `{other}`"))),
        }
    }
}

/// Interpolated precision at each recall position, plus the AP in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ApCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
    pub num_gt: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub iou_threshold: f64,
    pub recall_positions: usize,
    /// Easy, moderate, hard.
    pub levels: [ApCurve; 3],
    pub map: f64,
}

impl EvalReport {
    pub fn ap(&self, d: Difficulty) -> f64 {
        self.levels[d as usize].ap
    }

    /// Human-readable one-line summary.
    pub fn summary(&self) -> String {
        format!(
            "AP{}_{} @ IoU {}: easy {:.2}  moderate {:.2}  hard {:.2}  mAP {:.2}",
            self.recall_positions,
            self.mode.name(),
            self.iou_threshold,
            self.levels[0].ap,
            self.levels[1].ap,
            self.levels[2].ap,
            self.map
        )
    }
}

/// Recall positions of the 11- or 40-point protocol.
pub fn recall_positions(n: usize) -> Result<Vec<f64>> {
    match n {
        11 => Ok((0..=10).map(|k| k as f64 / 10.0).collect()),
        40 => Ok((1..=40).map(|k| k as f64 / 40.0).collect()),
        _ => Err(Error::InvalidArgument(format!("recall positions must be 11 or 40, got {n}"))),
    }
}

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

fn by_score_desc(dets: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

fn match_scene(dets: &[&Detection], valid: &[Box3D], ignored: &[Box3D], thr: f64, mode: EvalMode) -> Vec<(f64, Outcome)> {
    let mut taken = vec![false; valid.len()];
    by_score_desc(dets)
        .into_iter()
        .map(|i| {
            let d = dets[i];
            let best = valid
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .map(|(j, g)| (j, mode.iou(&d.bbox, g)))
                .filter(|&(_, iou)| iou >= thr)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let outcome = if let Some((j, _)) = best {
                taken[j] = true;
                Outcome::Tp
            } else if ignored.iter().any(|g| mode.iou(&d.bbox, g) >= thr) {
                Outcome::Ignored
            } else {
                Outcome::Fp
            };
            (d.score, outcome)
        })
        .collect()
}

fn curve(mut scored: Vec<(f64, Outcome)>, num_gt: usize, positions: &[f64]) -> ApCurve {
    scored.retain(|(_, o)| *o != Outcome::Ignored);
    // stable: equal scores keep their per-scene match order
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut tp = 0usize;
    let mut pr = Vec::with_capacity(scored.len());
    for (k, (_, o)) in scored.iter().enumerate() {
        if *o == Outcome::Tp {
            tp += 1;
        }
        pr.push((tp as f64 / num_gt.max(1) as f64, tp as f64 / (k + 1) as f64));
    }
    let precision: Vec<f64> = positions
        .iter()
        .map(|&r| {
            if num_gt == 0 {
                return 0.0;
            }
            pr.iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .collect();
    let ap = 100.0 * precision.iter().sum::<f64>() / positions.len() as f64;
    ApCurve {
        recall: positions.to_vec(),
        precision,
        ap,
        num_gt,
        num_tp: tp,
        num_fp: scored.len() - tp,
    }
}

fn is_neighbour_class(class: &str) -> bool {
    class == "Van"
}

/// Evaluate `dets` (keyed by scene id) against the target-class ground truth
/// of `gts`. Scenes missing from `dets` have no detections.
pub fn evaluate_ap(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &[Scene],
    iou_threshold: f64,
    recall: usize,
    mode: EvalMode,
) -> Result<EvalReport> {
    let positions = recall_positions(recall)?;
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidArgument(format!("IoU threshold {iou_threshold} outside [0, 1]")));
    }
    let mut scenes: Vec<&Scene> = gts.iter().collect();
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    let empty = Vec::new();

    let levels = Difficulty::ALL.map(|level| {
        let mut scored = Vec::new();
        let mut num_gt = 0;
        for scene in &scenes {
            let mut valid = Vec::new();
            let mut ignored = Vec::new();
            for o in &scene.objects {
                if o.class == TARGET_CLASS && o.difficulty.is_some_and(|d| d <= level) {
                    valid.push(o.bbox);
                } else if o.class == TARGET_CLASS || is_neighbour_class(&o.class) {
                    ignored.push(o.bbox);
                }
            }
            num_gt += valid.len();
            let scene_dets: Vec<&Detection> = dets
                .get(&scene.id)
                .unwrap_or(&empty)
                .iter()
                .filter(|d| d.class == TARGET_CLASS)
                .collect();
            scored.extend(match_scene(&scene_dets, &valid, &ignored, iou_threshold, mode));
        }
        curve(scored, num_gt, &positions)
    });
    let map = levels.iter().map(|c| c.ap).sum::<f64>() / 3.0;
    Ok(EvalReport {
        mode,
        iou_threshold,
        recall_positions: recall,
        levels,
        map,
    })
}
