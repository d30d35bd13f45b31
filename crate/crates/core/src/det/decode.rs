//! Prediction decoding: inverse of the target encoding, confidence
//! thresholding, and greedy per-class non-maximum suppression.

use crate::data::scene::{iou, BoxCxcywh};
use crate::det::arch::ArchConfig;
use crate::det::head::RawPredictions;
use crate::error::{Error, Result};
use crate::nn::sigmoid_scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoxCxcywh,
    pub class_id: u32,
    pub score: f64,
}

/// Decodes cells with objectness probability >= `conf_thresh`, then applies
/// greedy per-class NMS at `nms_iou`. Output is sorted by score descending
/// (ties broken by level, row, col for determinism).
pub fn decode_predictions(
    preds: &RawPredictions,
    arch: &ArchConfig,
    conf_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    if !(0.0 < conf_thresh && conf_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "conf_thresh must be in (0, 1), got {conf_thresh}"
        )));
    }
    if !(0.0 < nms_iou && nms_iou < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nms_iou must be in (0, 1), got {nms_iou}"
        )));
    }
    let k = arch.num_classes;
    let mut candidates: Vec<(Detection, usize, usize, usize)> = Vec::new();
    for (l, pred) in preds.levels.iter().enumerate() {
        let side = arch.spatial(l);
        let stride = arch.stride(l) as f64;
        let px = side * side;
        let pd = pred.data();
        for row in 0..side {
            for col in 0..side {
                let cell = row * side + col;
                let score = sigmoid_scalar(pd[cell]);
                if score < conf_thresh {
                    continue;
                }
                let cx = (col as f64 + sigmoid_scalar(pd[px + cell])) * stride;
                let cy = (row as f64 + sigmoid_scalar(pd[2 * px + cell])) * stride;
                let w = stride * pd[3 * px + cell].exp();
                let h = stride * pd[4 * px + cell].exp();
                let mut best_class = 0u32;
                let mut best_logit = f64::NEG_INFINITY;
                for c in 0..k {
                    let z = pd[(5 + c) * px + cell];
                    if z > best_logit {
                        best_logit = z;
                        best_class = c as u32;
                    }
                }
                candidates.push((
                    Detection {
                        bbox: BoxCxcywh { cx, cy, w, h },
                        class_id: best_class,
                        score,
                    },
                    l,
                    row,
                    col,
                ));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.score
            .total_cmp(&a.0.score)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    // Greedy per-class NMS in score order.
    let mut kept: Vec<Detection> = Vec::new();
    for (det, ..) in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == det.class_id && iou(&k.bbox, &det.bbox) > nms_iou);
        if !suppressed {
            kept.push(det);
        }
    }
    Ok(kept)
}
