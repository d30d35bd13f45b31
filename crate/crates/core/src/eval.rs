//! Detection metric: average precision at IoU 0.5, macro-averaged over
//! classes with at least one ground-truth instance, with an all-point
//! interpolated precision-recall curve.

use serde::Serialize;

use crate::data::scene::{iou, SyntheticScene};
use crate::det::Detection;
use crate::error::{Error, Result};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub ap: f64,
    /// Indexed by class id; `None` for classes with no ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub num_images: usize,
}

/// Greedy matching: detections in descending score order across the whole
/// set per class (ties broken by earlier scene id, then detection index),
/// each ground truth matched at most once at IoU >= 0.5.
pub fn evaluate_ap(
    detections: &[Vec<Detection>],
    scenes: &[SyntheticScene],
    num_classes: usize,
) -> Result<EvalResult> {
    if detections.len() != scenes.len() {
        return Err(Error::shape(
            "evaluate_ap",
            format!("{} detection lists", scenes.len()),
            format!("{}", detections.len()),
        ));
    }
    let mut per_class_ap = Vec::with_capacity(num_classes);
    for class in 0..num_classes as u32 {
        let n_gt: usize = scenes
            .iter()
            .map(|s| s.classes.iter().filter(|&&c| c == class).count())
            .sum();
        if n_gt == 0 {
            per_class_ap.push(None);
            continue;
        }

        // (score, scene order index, detection index, image index)
        let mut cands: Vec<(f64, u64, usize, usize)> = Vec::new();
        for (img, dets) in detections.iter().enumerate() {
            for (di, det) in dets.iter().enumerate() {
                if det.class_id == class {
                    cands.push((det.score, scenes[img].scene_id, di, img));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut matched: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.boxes.len()]).collect();
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut precisions = Vec::with_capacity(cands.len());
        let mut recalls = Vec::with_capacity(cands.len());
        for &(_, _, di, img) in &cands {
            let det = &detections[img][di];
            let scene = &scenes[img];
            let mut best: Option<(usize, f64)> = None;
            for (gi, (gt_box, &gt_class)) in scene.boxes.iter().zip(&scene.classes).enumerate() {
                if gt_class != class || matched[img][gi] {
                    continue;
                }
                let ov = iou(&det.bbox, gt_box);
                if ov >= MATCH_IOU && best.map_or(true, |(_, b)| ov > b) {
                    best = Some((gi, ov));
                }
            }
            match best {
                Some((gi, _)) => {
                    matched[img][gi] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
            precisions.push(tp as f64 / (tp + fp) as f64);
            recalls.push(tp as f64 / n_gt as f64);
        }

        per_class_ap.push(Some(all_point_ap(&precisions, &recalls)));
    }

    let present: Vec<f64> = per_class_ap.iter().filter_map(|a| *a).collect();
    let ap = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalResult {
        ap,
        per_class_ap,
        num_images: scenes.len(),
    })
}

/// Area under the all-point interpolated precision-recall curve.
fn all_point_ap(precisions: &[f64], recalls: &[f64]) -> f64 {
    if precisions.is_empty() {
        return 0.0;
    }
    // Precision envelope from the right.
    let mut envelope = precisions.to_vec();
    for i in (0..envelope.len() - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &r) in envelope.iter().zip(recalls) {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "spearman",
            format!("{} values", a.len()),
            format!("{}", b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::BoxCxcywh;
    use crate::nn::Tensor;

    fn scene_with(boxes: Vec<BoxCxcywh>, classes: Vec<u32>, id: u64) -> SyntheticScene {
        SyntheticScene {
            scene_id: id,
            image: Tensor::zeros(&[1, 32, 32]),
            boxes,
            classes,
        }
    }

    fn det(b: BoxCxcywh, class_id: u32, score: f64) -> Detection {
        Detection {
            bbox: b,
            class_id,
            score,
        }
    }

    const B: BoxCxcywh = BoxCxcywh {
        cx: 10.0,
        cy: 10.0,
        w: 6.0,
        h: 6.0,
    };

    #[test]
    fn perfect_detections_give_unit_ap() {
        let scenes = vec![scene_with(vec![B], vec![0], 0), scene_with(vec![B], vec![1], 1)];
        let dets = vec![vec![det(B, 0, 1.0)], vec![det(B, 1, 1.0)]];
        let result = evaluate_ap(&dets, &scenes, 2).unwrap();
        assert_eq!(result.ap, 1.0);
        assert_eq!(result.per_class_ap, vec![Some(1.0), Some(1.0)]);
        assert_eq!(result.num_images, 2);
    }

    #[test]
    fn no_detections_give_zero_ap() {
        let scenes = vec![scene_with(vec![B], vec![0], 0)];
        let result = evaluate_ap(&[vec![]], &scenes, 2).unwrap();
        assert_eq!(result.per_class_ap[0], Some(0.0));
        assert_eq!(result.per_class_ap[1], None);
        assert_eq!(result.ap, 0.0);
    }

    #[test]
    fn hand_computed_pr_curve_order_dependence() {
        // One ground truth, one true positive and one false positive.
        let far = BoxCxcywh {
            cx: 25.0,
            cy: 25.0,
            w: 6.0,
            h: 6.0,
        };
        let scenes = vec![scene_with(vec![B], vec![0], 0)];

        // TP at 0.9, FP at 0.8: the PR curve hits precision 1 at recall 1.
        let dets = vec![vec![det(B, 0, 0.9), det(far, 0, 0.8)]];
        let result = evaluate_ap(&dets, &scenes, 1).unwrap();
        assert_eq!(result.ap, 1.0);

        // FP at 0.9, TP at 0.8: precision at recall 1 is 0.5.
        let dets = vec![vec![det(far, 0, 0.9), det(B, 0, 0.8)]];
        let result = evaluate_ap(&dets, &scenes, 1).unwrap();
        assert_eq!(result.ap, 0.5);
    }

    #[test]
    fn duplicate_detection_of_same_gt_is_fp() {
        let scenes = vec![scene_with(vec![B], vec![0], 0)];
        let near = BoxCxcywh {
            cx: 10.5,
            cy: 10.0,
            w: 6.0,
            h: 6.0,
        };
        let dets = vec![vec![det(B, 0, 0.9), det(near, 0, 0.8)]];
        let result = evaluate_ap(&dets, &scenes, 1).unwrap();
        // Second detection overlaps an already-matched gt: false positive,
        // but recall 1 was reached at precision 1.
        assert_eq!(result.ap, 1.0);
    }

    #[test]
    fn spearman_known_values() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let up = vec![2.0, 4.0, 6.0, 8.0, 10.0];
        let down = vec![5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = vec![1.0, 1.0, 2.0, 2.0, 3.0];
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let rho = spearman(&a, &b).unwrap();
        assert!(rho > 0.8 && rho <= 1.0, "rho {rho}");
    }
}
