//! Detection loss: objectness binary cross-entropy over every cell, smooth-L1
//! box regression and class cross-entropy over assigned cells.
//!
//! Assignment: each object goes to the level whose stride is nearest to
//! `sqrt(w*h)` in log scale, at the cell containing its center; when two
//! objects land on the same cell the larger one wins.

use crate::data::scene::SyntheticScene;
use crate::det::arch::ArchConfig;
use crate::det::head::RawPredictions;
use crate::error::{Error, Result};
use crate::nn::{sigmoid_scalar, Tensor};

/// One resolved cell-level target.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    /// Fractional center offsets within the cell, in [0, 1].
    pub dx: f64,
    pub dy: f64,
    /// Log of box extent relative to the level stride.
    pub tw: f64,
    pub th: f64,
    pub class: u32,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub objectness: f64,
    pub box_reg: f64,
    pub classification: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(objectness: f64, box_reg: f64, classification: f64) -> Self {
        LossBreakdown {
            objectness,
            box_reg,
            classification,
            total: objectness + box_reg + classification,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Resolves ground-truth objects to per-cell targets.
pub fn assign_targets(scene: &SyntheticScene, arch: &ArchConfig) -> Vec<Assignment> {
    let mut assigned: Vec<Assignment> = Vec::with_capacity(scene.boxes.len());
    for (b, &class) in scene.boxes.iter().zip(&scene.classes) {
        let extent = (b.w * b.h).sqrt();
        let mut best_level = 0usize;
        let mut best_dist = f64::INFINITY;
        for l in 0..arch.levels {
            let dist = (extent.ln() - (arch.stride(l) as f64).ln()).abs();
            if dist < best_dist {
                best_dist = dist;
                best_level = l;
            }
        }
        let stride = arch.stride(best_level) as f64;
        let grid = arch.spatial(best_level);
        let col = ((b.cx / stride).floor() as usize).min(grid - 1);
        let row = ((b.cy / stride).floor() as usize).min(grid - 1);
        let candidate = Assignment {
            level: best_level,
            row,
            col,
            dx: b.cx / stride - col as f64,
            dy: b.cy / stride - row as f64,
            tw: (b.w / stride).ln(),
            th: (b.h / stride).ln(),
            class,
            area: b.area(),
        };
        match assigned
            .iter_mut()
            .find(|a| a.level == candidate.level && a.row == candidate.row && a.col == candidate.col)
        {
            Some(existing) => {
                if candidate.area > existing.area {
                    *existing = candidate;
                }
            }
            None => assigned.push(candidate),
        }
    }
    assigned
}

fn check_pred_shapes(preds: &RawPredictions, arch: &ArchConfig) -> Result<()> {
    if preds.levels.len() != arch.levels {
        return Err(Error::shape(
            "detection_loss",
            format!("{} levels", arch.levels),
            format!("{}", preds.levels.len()),
        ));
    }
    for (l, t) in preds.levels.iter().enumerate() {
        let want = [arch.pred_channels(), arch.spatial(l), arch.spatial(l)];
        if t.shape() != want {
            return Err(Error::shape(
                format!("detection_loss level {l}"),
                format!("{want:?}"),
                format!("{:?}", t.shape()),
            ));
        }
    }
    Ok(())
}

/// Numerically stable BCE-with-logits and its gradient wrt the logit.
fn bce_with_logits(z: f64, target: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
    let grad = sigmoid_scalar(z) - target;
    (loss, grad)
}

/// Smooth-L1 with beta = 1 and its gradient wrt the prediction.
fn smooth_l1(pred: f64, target: f64) -> (f64, f64) {
    let u = pred - target;
    if u.abs() < 1.0 {
        (0.5 * u * u, u)
    } else {
        (u.abs() - 0.5, u.signum())
    }
}

struct LossAccum {
    breakdown: LossBreakdown,
    grads: Option<Vec<Tensor>>,
}

fn run_loss(
    preds: &RawPredictions,
    scene: &SyntheticScene,
    arch: &ArchConfig,
    want_grads: bool,
) -> Result<LossAccum> {
    check_pred_shapes(preds, arch)?;
    let assignments = assign_targets(scene, arch);
    let k = arch.num_classes;

    let total_cells: usize = (0..arch.levels).map(|l| arch.spatial(l) * arch.spatial(l)).sum();
    let n_assigned = assignments.len();
    let obj_norm = 1.0 / total_cells as f64;
    let pos_norm = if n_assigned > 0 { 1.0 / n_assigned as f64 } else { 0.0 };

    let mut grads: Option<Vec<Tensor>> =
        want_grads.then(|| preds.levels.iter().map(|t| Tensor::zeros(t.shape())).collect());

    // Objectness over every cell. Targets are 1 at assigned cells.
    let mut obj_loss = 0.0;
    for (l, pred) in preds.levels.iter().enumerate() {
        let side = arch.spatial(l);
        let px = side * side;
        let pd = pred.data();
        for cell in 0..px {
            let target = assignments
                .iter()
                .any(|a| a.level == l && a.row * side + a.col == cell);
            let (loss, grad) = bce_with_logits(pd[cell], if target { 1.0 } else { 0.0 });
            obj_loss += loss;
            if let Some(gs) = grads.as_mut() {
                gs[l].data_mut()[cell] = grad * obj_norm;
            }
        }
    }
    obj_loss *= obj_norm;

    // Box regression and classification at assigned cells.
    let mut box_loss = 0.0;
    let mut cls_loss = 0.0;
    for a in &assignments {
        let side = arch.spatial(a.level);
        let px = side * side;
        let cell = a.row * side + a.col;
        let pd = preds.levels[a.level].data();

        // Center offsets pass through a sigmoid before the comparison.
        let (tx, ty) = (pd[px + cell], pd[2 * px + cell]);
        let (sx, sy) = (sigmoid_scalar(tx), sigmoid_scalar(ty));
        let (lx, gx) = smooth_l1(sx, a.dx);
        let (ly, gy) = smooth_l1(sy, a.dy);
        let (lw, gw) = smooth_l1(pd[3 * px + cell], a.tw);
        let (lh, gh) = smooth_l1(pd[4 * px + cell], a.th);
        box_loss += lx + ly + lw + lh;

        // Softmax cross-entropy over class logits.
        let logits: Vec<f64> = (0..k).map(|c| pd[(5 + c) * px + cell]).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        cls_loss += sum.ln() + max - logits[a.class as usize];

        if let Some(gs) = grads.as_mut() {
            let gd = gs[a.level].data_mut();
            gd[px + cell] += gx * sx * (1.0 - sx) * pos_norm;
            gd[2 * px + cell] += gy * sy * (1.0 - sy) * pos_norm;
            gd[3 * px + cell] += gw * pos_norm;
            gd[4 * px + cell] += gh * pos_norm;
            for c in 0..k {
                let softmax = exp[c] / sum;
                let target = if c == a.class as usize { 1.0 } else { 0.0 };
                gd[(5 + c) * px + cell] += (softmax - target) * pos_norm;
            }
        }
    }
    box_loss *= pos_norm;
    cls_loss *= pos_norm;

    let breakdown = LossBreakdown::new(obj_loss, box_loss, cls_loss);
    if !breakdown.is_finite() {
        return Err(Error::NonFinite("detection loss".into()));
    }
    Ok(LossAccum { breakdown, grads })
}

pub fn detection_loss(
    preds: &RawPredictions,
    scene: &SyntheticScene,
    arch: &ArchConfig,
) -> Result<LossBreakdown> {
    run_loss(preds, scene, arch, false).map(|a| a.breakdown)
}

/// Loss plus gradients wrt each level's prediction map.
pub fn detection_loss_backward(
    preds: &RawPredictions,
    scene: &SyntheticScene,
    arch: &ArchConfig,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let accum = run_loss(preds, scene, arch, true)?;
    Ok((accum.breakdown, accum.grads.expect("grads requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::BoxCxcywh;

    fn arch() -> ArchConfig {
        ArchConfig {
            image_size: 32,
            levels: 1,
            base_channels: 2,
            stem_channels: 2,
            num_classes: 2,
        }
    }

    fn empty_scene(size: usize) -> SyntheticScene {
        SyntheticScene {
            scene_id: 0,
            image: Tensor::zeros(&[1, size, size]),
            boxes: vec![],
            classes: vec![],
        }
    }

    fn one_object_scene(size: usize) -> SyntheticScene {
        SyntheticScene {
            scene_id: 1,
            image: Tensor::zeros(&[1, size, size]),
            // Center (6, 10) on the stride-4 grid: cell (2, 1), offsets (0.5, 0.5).
            boxes: vec![BoxCxcywh { cx: 6.0, cy: 10.0, w: 4.0, h: 4.0 }],
            classes: vec![1],
        }
    }

    fn preds_filled(arch: &ArchConfig, objectness: f64) -> RawPredictions {
        let side = arch.spatial(0);
        let mut t = Tensor::zeros(&[arch.pred_channels(), side, side]);
        for v in t.data_mut()[..side * side].iter_mut() {
            *v = objectness;
        }
        RawPredictions { levels: vec![t] }
    }

    #[test]
    fn empty_scene_confident_negatives_near_zero() {
        let arch = arch();
        let loss = detection_loss(&preds_filled(&arch, -20.0), &empty_scene(32), &arch).unwrap();
        assert!(loss.total < 1e-6, "total {}", loss.total);
        assert_eq!(loss.box_reg, 0.0);
        assert_eq!(loss.classification, 0.0);
    }

    #[test]
    fn perfect_predictions_near_zero_loss() {
        let arch = arch();
        let scene = one_object_scene(32);
        let a = &assign_targets(&scene, &arch)[0];
        assert_eq!((a.level, a.row, a.col), (0, 2, 1));

        let side = arch.spatial(0);
        let px = side * side;
        let mut t = Tensor::filled(&[arch.pred_channels(), side, side], 0.0);
        {
            let d = t.data_mut();
            for cell in 0..px {
                d[cell] = -20.0;
            }
            let cell = a.row * side + a.col;
            d[cell] = 20.0;
            // logit(0.5) = 0 for both center offsets.
            d[px + cell] = 0.0;
            d[2 * px + cell] = 0.0;
            d[3 * px + cell] = a.tw;
            d[4 * px + cell] = a.th;
            d[(5 + 1) * px + cell] = 20.0;
            d[5 * px + cell] = -20.0;
        }
        let loss = detection_loss(&RawPredictions { levels: vec![t] }, &scene, &arch).unwrap();
        assert!(loss.total < 1e-6, "total {}", loss.total);
    }

    /// Hand-computed oracle on a one-object scene with all-zero predictions.
    #[test]
    fn hand_computed_zero_prediction_loss() {
        let arch = arch();
        let scene = one_object_scene(32);
        let preds = preds_filled(&arch, 0.0);
        let loss = detection_loss(&preds, &scene, &arch).unwrap();

        // 64 cells, all logits 0: BCE = ln 2 everywhere.
        let want_obj = std::f64::consts::LN_2;
        // Assigned cell: sigmoid(0) = 0.5 exactly matches dx = dy = 0.5;
        // tw = th = ln(4/4) = 0, prediction 0 -> box loss 0.
        let want_box = 0.0;
        // Two classes, zero logits: CE = ln 2.
        let want_cls = std::f64::consts::LN_2;
        assert!((loss.objectness - want_obj).abs() < 1e-12);
        assert!((loss.box_reg - want_box).abs() < 1e-12);
        assert!((loss.classification - want_cls).abs() < 1e-12);
        assert!((loss.total - (want_obj + want_box + want_cls)).abs() < 1e-12);
    }

    #[test]
    fn same_cell_keeps_larger_object() {
        let arch = arch();
        let mut scene = one_object_scene(32);
        scene.boxes.push(BoxCxcywh { cx: 5.0, cy: 9.0, w: 6.0, h: 6.0 });
        scene.classes.push(0);
        let assigned = assign_targets(&scene, &arch);
        assert_eq!(assigned.len(), 1);
        assert_eq!(assigned[0].class, 0);
        assert_eq!(assigned[0].area, 36.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::nn::finite_diff_check;
        let arch = arch();
        let scene = one_object_scene(32);
        let side = arch.spatial(0);
        let n = arch.pred_channels() * side * side;
        let base: Vec<f64> = (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) * 0.09).collect();
        let preds = RawPredictions {
            levels: vec![Tensor::from_vec(&[arch.pred_channels(), side, side], base.clone()).unwrap()],
        };
        let (_, grads) = detection_loss_backward(&preds, &scene, &arch).unwrap();
        let scene_c = scene.clone();
        let arch_c = arch.clone();
        let mut f = move |p: &[f64]| {
            let preds = RawPredictions {
                levels: vec![Tensor::from_vec(&[arch_c.pred_channels(), side, side], p.to_vec()).unwrap()],
            };
            detection_loss(&preds, &scene_c, &arch_c).unwrap().total
        };
        let err = finite_diff_check(&mut f, &base, grads[0].data(), 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
