use super::{rotated_iou_bev, Detection};

/// Indices kept by greedy rotated NMS, in descending score order (ties keep
/// the lower original index first).
pub fn nms_rotated_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        let bi = &dets[i].bbox.bev;
        let suppressed = keep.iter().any(|&k| {
            let bk = &dets[k].bbox.bev;
            let reach = bi.circumradius() + bk.circumradius();
            (bi.cx - bk.cx).hypot(bi.cy - bk.cy) <= reach
                && rotated_iou_bev(bi, bk) > iou_threshold
        });
        if !suppressed {
            keep.push(i);
        }
    }
    keep
}

/// Greedy score-descending suppression with rotated BEV IoU.
pub fn nms_rotated(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_rotated_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}
