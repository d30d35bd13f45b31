//! Runtime routing, threshold calibration from latency targets, trade-off
//! sweeps, threshold robustness, and the difficulty ranking report.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::scene::{iou, SyntheticScene};
use crate::det::{decode_predictions, CascadeModel, Detection, Route};
use crate::error::{Error, Result};
use crate::eval::evaluate_ap;
use crate::router::pool_concat;
use crate::train::random_phi;

/// Decoding knobs used whenever predictions are turned into detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub conf_thresh: f64,
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            conf_thresh: 0.3,
            nms_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoutingDecision {
    pub phi: f64,
    pub tau: f64,
    pub route: Route,
    pub flops: u64,
    pub wall_time: f64,
}

/// Routes one image: score it from the first backbone's features, take the
/// easy exit if `phi <= tau`, otherwise run the full cascade.
pub fn infer_dynamic(
    model: &CascadeModel,
    tau: f64,
    scene: &SyntheticScene,
    decode: &DecodeConfig,
) -> Result<(Vec<Detection>, RoutingDecision)> {
    if tau.is_nan() {
        return Err(Error::InvalidArgument("tau must not be NaN".into()));
    }
    let start = Instant::now();
    let (f1, _) = model.b1.forward(&scene.image)?;
    let phi = model.router.forward(&pool_concat(&f1)?)?.phi();
    let route = if phi <= tau { Route::Easy } else { Route::Hard };
    let preds = match route {
        Route::Easy => model.predict_easy(&f1)?,
        Route::Hard => model.predict_hard(&scene.image, &f1)?,
    };
    let detections = decode_predictions(&preds, &model.arch, decode.conf_thresh, decode.nms_iou)?;
    Ok((
        detections,
        RoutingDecision {
            phi,
            tau,
            route,
            flops: model.count_flops(route),
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Standalone first-detector pipeline (no routing).
pub fn infer_easy_only(
    model: &CascadeModel,
    scene: &SyntheticScene,
    decode: &DecodeConfig,
) -> Result<Vec<Detection>> {
    let (f1, _) = model.b1.forward(&scene.image)?;
    let preds = model.predict_easy(&f1)?;
    decode_predictions(&preds, &model.arch, decode.conf_thresh, decode.nms_iou)
}

/// Full-cascade pipeline (no routing).
pub fn infer_hard_only(
    model: &CascadeModel,
    scene: &SyntheticScene,
    decode: &DecodeConfig,
) -> Result<Vec<Detection>> {
    let (f1, _) = model.b1.forward(&scene.image)?;
    let preds = model.predict_hard(&scene.image, &f1)?;
    decode_predictions(&preds, &model.arch, decode.conf_thresh, decode.nms_iou)
}

/// Maximum allowable hard fraction for a latency target:
/// `k = (lat_t - lat_1) / (lat_2 - lat_1)`.
pub fn compute_k(lat1: f64, lat2: f64, lat_t: f64) -> Result<f64> {
    if !(lat1 < lat2) {
        return Err(Error::InvalidArgument(format!(
            "lat1 must be < lat2, got {lat1} and {lat2}"
        )));
    }
    if !(lat1 <= lat_t && lat_t <= lat2) {
        return Err(Error::InvalidArgument(format!(
            "target latency {lat_t} outside [{lat1}, {lat2}]"
        )));
    }
    Ok((lat_t - lat1) / (lat2 - lat1))
}

fn next_down(v: f64) -> f64 {
    // Scores are strictly positive, so stepping the bit pattern down is safe.
    f64::from_bits(v.to_bits() - 1)
}

/// Threshold realizing a target hard fraction `k` over a score sample: the
/// `(1 - k)`-quantile with linear interpolation between order statistics,
/// so that roughly a `k` fraction of scores exceed it. `k = 0` returns the
/// maximum; `k = 1` returns just below the minimum so every score routes
/// hard under the `phi <= tau` rule.
pub fn calibrate_threshold(scores: &[f64], k: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("score sample"));
    }
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must be in [0, 1], got {k}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if k == 1.0 {
        return Ok(next_down(sorted[0]));
    }
    let q = 1.0 - k;
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let tau = if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    };
    Ok(tau)
}

/// How latency inputs and the sweep's latency column are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Deterministic: latencies derived from analytic FLOPs at a fixed
    /// 1 GFLOP/s reference rate.
    Analytic,
    /// Wall-clock medians measured on this machine.
    Measured,
}

/// One row of the variable-speed sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TradeOffPoint {
    pub k: f64,
    pub tau: f64,
    pub ap: f64,
    pub mean_flops: f64,
    pub mean_latency_ms: f64,
    pub hard_fraction: f64,
    pub n_images: usize,
    pub n_hard: usize,
    pub total_flops: u64,
}

/// Difficulty scores over a dataset, in dataset order.
pub fn phi_scores(model: &CascadeModel, scenes: &[SyntheticScene]) -> Result<Vec<f64>> {
    scenes
        .par_iter()
        .map(|scene| {
            let (f1, _) = model.b1.forward(&scene.image)?;
            model.router.score(&f1)
        })
        .collect()
}

/// Threshold for sweep row `k`: the validation quantile in the interior,
/// pinned to the closed endpoints at `k = 0` and `k = 1` so those rows
/// reproduce the single-detector and full-cascade pipelines on any eval set.
pub fn sweep_threshold(val_scores: &[f64], k: f64) -> Result<f64> {
    if k == 0.0 {
        Ok(1.0)
    } else if k == 1.0 {
        Ok(0.0)
    } else {
        calibrate_threshold(val_scores, k)
    }
}

/// Runs the trade-off sweep: thresholds calibrated on `val_scenes`, metrics
/// measured on `eval_scenes`. Rows come back sorted by `k`.
pub fn sweep_tradeoff(
    model: &CascadeModel,
    eval_scenes: &[SyntheticScene],
    val_scenes: &[SyntheticScene],
    k_list: &[f64],
    decode: &DecodeConfig,
    timing: TimingMode,
) -> Result<Vec<TradeOffPoint>> {
    if eval_scenes.is_empty() || val_scenes.is_empty() {
        return Err(Error::Empty("sweep input set"));
    }
    let val_scores = phi_scores(model, val_scenes)?;
    let mut ks = k_list.to_vec();
    ks.sort_by(f64::total_cmp);

    let flops_easy = model.count_flops(Route::Easy);
    let flops_hard = model.count_flops(Route::Hard);

    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::InvalidArgument(format!("sweep k {k} outside [0, 1]")));
        }
        let tau = sweep_threshold(&val_scores, k)?;
        let results: Vec<(Vec<Detection>, Route, f64)> = eval_scenes
            .par_iter()
            .map(|scene| {
                let (dets, decision) = infer_dynamic(model, tau, scene, decode)?;
                Ok((dets, decision.route, decision.wall_time))
            })
            .collect::<Result<Vec<_>>>()?;

        let n = eval_scenes.len();
        let n_hard = results.iter().filter(|(_, r, _)| *r == Route::Hard).count();
        let total_flops = (n - n_hard) as u64 * flops_easy + n_hard as u64 * flops_hard;
        let mean_flops = total_flops as f64 / n as f64;
        let mean_latency_ms = match timing {
            TimingMode::Analytic => mean_flops / 1e6,
            TimingMode::Measured => {
                results.iter().map(|(_, _, t)| t).sum::<f64>() / n as f64 * 1e3
            }
        };
        let detections: Vec<Vec<Detection>> = results.into_iter().map(|(d, _, _)| d).collect();
        let eval = evaluate_ap(&detections, eval_scenes, model.arch.num_classes)?;

        rows.push(TradeOffPoint {
            k,
            tau,
            ap: eval.ap,
            mean_flops,
            mean_latency_ms,
            hard_fraction: n_hard as f64 / n as f64,
            n_images: n,
            n_hard,
            total_flops,
        });
    }
    Ok(rows)
}

/// One row of the threshold-robustness study.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessRow {
    pub val_size: usize,
    pub tau_val: f64,
    pub tau_ref: f64,
    pub abs_dev: f64,
    pub achieved_hard_fraction: f64,
}

/// Subsamples the validation score pool at several sizes, compares each
/// threshold against the full test set's threshold, and reports the hard
/// fraction the subsampled threshold achieves on the test set.
pub fn threshold_robustness(
    pool_scores: &[f64],
    sizes: &[usize],
    k: f64,
    test_scores: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if pool_scores.is_empty() || test_scores.is_empty() {
        return Err(Error::Empty("robustness score sets"));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be >= 1".into()));
    }
    let tau_ref = calibrate_threshold(test_scores, k)?;
    let mut rows = Vec::with_capacity(sizes.len() * resamples);
    for &size in sizes {
        if size == 0 || size > pool_scores.len() {
            return Err(Error::InvalidArgument(format!(
                "subsample size {size} outside 1..={}",
                pool_scores.len()
            )));
        }
        for draw in 0..resamples {
            let subsample: Vec<f64> = if size == pool_scores.len() {
                pool_scores.to_vec()
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (size as u64) << 20 ^ draw as u64);
                let mut indices: Vec<usize> = (0..pool_scores.len()).collect();
                indices.shuffle(&mut rng);
                indices[..size].iter().map(|&i| pool_scores[i]).collect()
            };
            let tau_val = calibrate_threshold(&subsample, k)?;
            let hard = test_scores.iter().filter(|&&s| s > tau_val).count();
            rows.push(RobustnessRow {
                val_size: size,
                tau_val,
                tau_ref,
                abs_dev: (tau_val - tau_ref).abs(),
                achieved_hard_fraction: hard as f64 / test_scores.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// One row of the difficulty ranking.
#[derive(Debug, Clone, Serialize)]
pub struct DifficultyRow {
    pub scene_id: u64,
    pub phi: f64,
    pub num_objects: usize,
    pub mean_size: f64,
    pub max_pair_iou: f64,
}

#[derive(Debug, Clone)]
pub struct DifficultyReport {
    /// All scenes sorted by phi ascending (ties by scene id).
    pub rows: Vec<DifficultyRow>,
    pub easiest: Vec<u64>,
    pub hardest: Vec<u64>,
}

/// Ranks scenes by difficulty score and summarizes ground-truth statistics
/// for the extremes.
pub fn difficulty_report(
    model: &CascadeModel,
    scenes: &[SyntheticScene],
    n_extremes: usize,
) -> Result<DifficultyReport> {
    let scores = phi_scores(model, scenes)?;
    let mut rows: Vec<DifficultyRow> = scenes
        .iter()
        .zip(&scores)
        .map(|(scene, &phi)| {
            let n = scene.boxes.len();
            let mean_size = if n == 0 {
                0.0
            } else {
                scene.boxes.iter().map(|b| b.area().sqrt()).sum::<f64>() / n as f64
            };
            let mut max_pair = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    max_pair = max_pair.max(iou(&scene.boxes[i], &scene.boxes[j]));
                }
            }
            DifficultyRow {
                scene_id: scene.scene_id,
                phi,
                num_objects: n,
                mean_size,
                max_pair_iou: max_pair,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.phi.total_cmp(&b.phi).then(a.scene_id.cmp(&b.scene_id)));
    let take = n_extremes.min(rows.len());
    let easiest = rows[..take].iter().map(|r| r.scene_id).collect();
    let hardest = rows[rows.len() - take..].iter().map(|r| r.scene_id).collect();
    Ok(DifficultyReport {
        rows,
        easiest,
        hardest,
    })
}

/// Routes with an external scorer instead of the learned router; used for
/// the random baseline.
pub fn infer_with_random_routing(
    model: &CascadeModel,
    seed: u64,
    tau: f64,
    scene: &SyntheticScene,
    decode: &DecodeConfig,
) -> Result<(Vec<Detection>, Route)> {
    let phi = random_phi(seed, scene.scene_id);
    let route = if phi <= tau { Route::Easy } else { Route::Hard };
    let dets = match route {
        Route::Easy => infer_easy_only(model, scene, decode)?,
        Route::Hard => infer_hard_only(model, scene, decode)?,
    };
    Ok((dets, route))
}
