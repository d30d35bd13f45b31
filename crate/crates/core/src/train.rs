//! Two-phase optimization: joint detector training, offset calibration from
//! the median per-image loss difference, and router training against the
//! offset objective, plus the ablation strategies used for comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::scene::SyntheticScene;
use crate::det::{CascadeModel, GradMap};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::optim::{Optimizer, TrainConfig};
use crate::router::pool_concat;

#[derive(Debug, Clone, Serialize)]
pub struct DetectorStep {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DetectorTrainLog {
    pub steps: Vec<DetectorStep>,
    pub epochs: Vec<DetectorEpoch>,
}

/// Jointly minimizes `L1 + L2` over both detectors and the connection.
/// The router is untouched. Deterministic for a fixed config.
pub fn train_detectors_joint(
    model: &mut CascadeModel,
    scenes: &[SyntheticScene],
    cfg: &TrainConfig,
) -> Result<DetectorTrainLog> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut log = DetectorTrainLog::default();
    let mut optimizer = Optimizer::new(cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        // Fisher-Yates with the phase RNG keeps runs reproducible.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_l1 = 0.0;
        let mut epoch_l2 = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| model.joint_loss_backward(&scenes[i]))
                .collect::<Result<Vec<_>>>()?;

            let inv = 1.0 / batch.len() as f64;
            let mut grads = GradMap::new();
            let mut l1_sum = 0.0;
            let mut l2_sum = 0.0;
            for (l1, l2, g) in results {
                l1_sum += l1.total;
                l2_sum += l2.total;
                for (name, tensor) in g {
                    crate::det::accumulate(&mut grads, name, tensor);
                }
            }
            for (_, g) in grads.iter_mut() {
                g.scale(inv);
            }
            let (l1, l2) = (l1_sum * inv, l2_sum * inv);
            step += 1;
            if !(l1 + l2).is_finite() {
                return Err(Error::Diverged {
                    step,
                    term: "joint detector loss".into(),
                });
            }

            let mut params = Vec::new();
            model.visit_detector_params_mut(&mut params);
            optimizer.step(&mut params, &grads);

            epoch_l1 += l1_sum;
            epoch_l2 += l2_sum;
            log.steps.push(DetectorStep {
                step,
                l1,
                l2,
                total: l1 + l2,
            });
        }
        let n = scenes.len() as f64;
        log.epochs.push(DetectorEpoch {
            epoch,
            mean_l1: epoch_l1 / n,
            mean_l2: epoch_l2 / n,
            mean_total: (epoch_l1 + epoch_l2) / n,
        });
    }
    Ok(log)
}

/// The calibrated offset: median of per-image `L1 - L2` on the set it was
/// computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOffset {
    pub delta: f64,
    pub computed_over: String,
    pub size: usize,
}

/// Lower median: element at index `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Per-image branch losses over a dataset, detectors frozen. Parallel, in
/// dataset order.
pub fn branch_losses_batch(
    model: &CascadeModel,
    scenes: &[SyntheticScene],
) -> Result<Vec<(f64, f64)>> {
    scenes
        .par_iter()
        .map(|s| model.branch_losses(s).map(|(l1, l2)| (l1.total, l2.total)))
        .collect()
}

/// Median of the per-image training-loss difference between the detectors.
pub fn calibrate_delta(
    model: &CascadeModel,
    scenes: &[SyntheticScene],
    label: &str,
) -> Result<DeltaOffset> {
    if scenes.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let losses = branch_losses_batch(model, scenes)?;
    let diffs: Vec<f64> = losses.iter().map(|(l1, l2)| l1 - l2).collect();
    Ok(DeltaOffset {
        delta: lower_median(&diffs)?,
        computed_over: label.to_string(),
        size: scenes.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RouterStep {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub phi: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouterEpoch {
    pub epoch: usize,
    pub mean_phi: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RouterTrainLog {
    pub steps: Vec<RouterStep>,
    pub epochs: Vec<RouterEpoch>,
}

/// Frozen per-image quantities the router phase consumes. The detectors do
/// not change during this phase, so these are computed once.
pub struct RouterInput {
    pub scene_id: u64,
    pub pooled: Tensor,
    pub l1: f64,
    pub l2: f64,
}

pub fn precompute_router_inputs(
    model: &CascadeModel,
    scenes: &[SyntheticScene],
) -> Result<Vec<RouterInput>> {
    scenes
        .par_iter()
        .map(|scene| {
            let (f1, _) = model.b1.forward(&scene.image)?;
            let pooled = pool_concat(&f1)?;
            let p1 = model.predict_easy(&f1)?;
            let l1 = crate::det::detection_loss(&p1, scene, &model.arch)?;
            let p2 = model.predict_hard(&scene.image, &f1)?;
            let l2 = crate::det::detection_loss(&p2, scene, &model.arch)?;
            Ok(RouterInput {
                scene_id: scene.scene_id,
                pooled,
                l1: l1.total,
                l2: l2.total,
            })
        })
        .collect()
}

/// Router training objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterStrategy {
    /// Offset objective: `(1-phi)(L1 - delta/2) + phi(L2 + delta/2)`.
    Proposed,
    /// `(1-phi) L1 + phi L2`, no constraint.
    Unconstrained,
    /// Unconstrained plus a `lambda * phi` cost penalty.
    LambdaPenalty,
    /// No training; a seeded uniform scorer replaces the router.
    Random,
    /// Binary labels from per-image loss improvement, fit with BCE.
    ApBased,
}

impl RouterStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RouterStrategy::Proposed => "proposed",
            RouterStrategy::Unconstrained => "unconstrained",
            RouterStrategy::LambdaPenalty => "lambda",
            RouterStrategy::Random => "random",
            RouterStrategy::ApBased => "ap-based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub strategy: RouterStrategy,
    /// Only meaningful for the lambda-penalty strategy.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.strategy, self.lambda) {
            (RouterStrategy::LambdaPenalty, Some(l)) if l >= 0.0 => Ok(()),
            (RouterStrategy::LambdaPenalty, _) => Err(Error::InvalidConfig(
                "lambda-penalty requires lambda >= 0".into(),
            )),
            (_, Some(_)) => Err(Error::InvalidConfig(
                "lambda is only valid with the lambda-penalty strategy".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Shared descent loop over the per-image objective
/// `(1-phi)(L1 - offset/2 + penalty-free reward) ...` expressed through the
/// gradient coefficient `L1 - L2 - offset`. `offset` is the calibrated delta
/// for the proposed strategy, zero for unconstrained, lambda for the
/// penalty strategy. Updates run serially in dataset order.
fn run_router_descent(
    model: &mut CascadeModel,
    inputs: &[RouterInput],
    offset: f64,
    loss_fn: impl Fn(f64, f64, f64) -> f64,
    cfg: &TrainConfig,
) -> Result<RouterTrainLog> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("router training set"));
    }
    let mut log = RouterTrainLog::default();
    let mut optimizer = Optimizer::new(cfg);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut phi_sum = 0.0;
        let mut loss_sum = 0.0;
        for input in inputs {
            let cache = model.router.forward(&input.pooled)?;
            let phi = cache.phi();
            let loss = loss_fn(phi, input.l1, input.l2);
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    term: "router loss".into(),
                });
            }
            let grads = model.router.backward(&cache, input.l1 - input.l2 - offset)?;
            let mut params = Vec::new();
            model.router.visit_params_mut("router", &mut params);
            optimizer.step(&mut params, &grads);

            phi_sum += phi;
            loss_sum += loss;
            log.steps.push(RouterStep {
                step,
                l1: input.l1,
                l2: input.l2,
                phi,
                loss,
            });
        }
        let n = inputs.len() as f64;
        log.epochs.push(RouterEpoch {
            epoch,
            mean_phi: phi_sum / n,
            mean_loss: loss_sum / n,
        });
    }
    Ok(log)
}

/// Trains the router against the offset objective with frozen detectors.
pub fn train_router(
    model: &mut CascadeModel,
    delta: &DeltaOffset,
    scenes: &[SyntheticScene],
    cfg: &TrainConfig,
) -> Result<RouterTrainLog> {
    let inputs = precompute_router_inputs(model, scenes)?;
    model.delta = delta.delta;
    let d = delta.delta;
    run_router_descent(
        model,
        &inputs,
        d,
        move |phi, l1, l2| (1.0 - phi) * (l1 - d / 2.0) + phi * (l2 + d / 2.0),
        cfg,
    )
}

/// Deterministic per-scene uniform score in (0, 1) for the random strategy.
pub fn random_phi(seed: u64, scene_id: u64) -> f64 {
    // splitmix64 over the pair.
    let mut z = seed ^ scene_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ((z >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

#[derive(Debug)]
pub enum AblationOutcome {
    /// The router in the model was trained in place.
    Trained(RouterTrainLog),
    /// Random strategy: the model router is untouched; score images with
    /// [`random_phi`] under this seed.
    RandomScorer { seed: u64 },
}

/// Runs one of the comparison strategies.
pub fn train_router_ablation(
    model: &mut CascadeModel,
    scenes: &[SyntheticScene],
    ab: &AblationConfig,
    cfg: &TrainConfig,
) -> Result<AblationOutcome> {
    ab.validate()?;
    match ab.strategy {
        RouterStrategy::Proposed => {
            let delta = calibrate_delta(model, scenes, "ablation")?;
            train_router(model, &delta, scenes, cfg).map(AblationOutcome::Trained)
        }
        RouterStrategy::Unconstrained => {
            let inputs = precompute_router_inputs(model, scenes)?;
            run_router_descent(
                model,
                &inputs,
                0.0,
                |phi, l1, l2| (1.0 - phi) * l1 + phi * l2,
                cfg,
            )
            .map(AblationOutcome::Trained)
        }
        RouterStrategy::LambdaPenalty => {
            let lambda = ab.lambda.unwrap_or(0.0);
            let inputs = precompute_router_inputs(model, scenes)?;
            run_router_descent(
                model,
                &inputs,
                lambda,
                move |phi, l1, l2| (1.0 - phi) * l1 + phi * l2 + lambda * phi,
                cfg,
            )
            .map(AblationOutcome::Trained)
        }
        RouterStrategy::Random => Ok(AblationOutcome::RandomScorer { seed: cfg.seed }),
        RouterStrategy::ApBased => {
            let inputs = precompute_router_inputs(model, scenes)?;
            let gaps: Vec<f64> = inputs.iter().map(|i| i.l1 - i.l2).collect();
            let median_gap = lower_median(&gaps)?;
            train_router_bce(model, &inputs, median_gap, cfg).map(AblationOutcome::Trained)
        }
    }
}

/// Supervised fit: hard label when the second detector improves the loss by
/// more than the median gap, binary cross-entropy on the router output.
fn train_router_bce(
    model: &mut CascadeModel,
    inputs: &[RouterInput],
    median_gap: f64,
    cfg: &TrainConfig,
) -> Result<RouterTrainLog> {
    cfg.validate()?;
    let mut log = RouterTrainLog::default();
    let mut optimizer = Optimizer::new(cfg);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut phi_sum = 0.0;
        let mut loss_sum = 0.0;
        for input in inputs {
            let label = if input.l1 - input.l2 > median_gap { 1.0 } else { 0.0 };
            let cache = model.router.forward(&input.pooled)?;
            let phi = cache.phi();
            let loss = -(label * phi.ln() + (1.0 - label) * (1.0 - phi).ln());
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    term: "router bce loss".into(),
                });
            }
            // d(BCE)/d(logit) = phi - label; the sigmoid factor cancels.
            let grads = model.router.backward_logit(&cache, phi - label)?;
            let mut params = Vec::new();
            model.router.visit_params_mut("router", &mut params);
            optimizer.step(&mut params, &grads);
            phi_sum += phi;
            loss_sum += loss;
            log.steps.push(RouterStep {
                step,
                l1: input.l1,
                l2: input.l2,
                phi,
                loss,
            });
        }
        let n = inputs.len() as f64;
        log.epochs.push(RouterEpoch {
            epoch,
            mean_phi: phi_sum / n,
            mean_loss: loss_sum / n,
        });
    }
    Ok(log)
}

/// One row of the loss-curve report.
#[derive(Debug, Clone, Serialize)]
pub struct LossCurveRow {
    pub scene_id: u64,
    pub l1: f64,
    pub l2: f64,
    pub l1_adj: f64,
    pub l2_adj: f64,
    pub phi: f64,
}

/// Per-image branch losses, offset-adjusted curves, and router scores,
/// sorted by `l1 - l2` ascending.
pub fn loss_curve_report(
    model: &CascadeModel,
    delta: &DeltaOffset,
    scenes: &[SyntheticScene],
) -> Result<Vec<LossCurveRow>> {
    let inputs = precompute_router_inputs(model, scenes)?;
    let mut rows: Vec<LossCurveRow> = inputs
        .iter()
        .map(|input| {
            let phi = model.router.forward(&input.pooled)?.phi();
            Ok(LossCurveRow {
                scene_id: input.scene_id,
                l1: input.l1,
                l2: input.l2,
                l1_adj: input.l1 - delta.delta / 2.0,
                l2_adj: input.l2 + delta.delta / 2.0,
                phi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (a.l1 - a.l2)
            .total_cmp(&(b.l1 - b.l2))
            .then(a.scene_id.cmp(&b.scene_id))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{generate_scene, SceneConfig};
    use crate::det::ArchConfig;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            image_size: 32,
            levels: 3,
            base_channels: 4,
            stem_channels: 4,
            num_classes: 3,
        }
    }

    fn small_scenes(n: usize, seed: u64) -> Vec<SyntheticScene> {
        let config = SceneConfig {
            image_size: 32,
            num_objects_range: (1, 4),
            size_range: (0.12, 0.5),
            max_overlap_iou: 0.4,
            noise_sigma: 0.03,
            num_classes: 3,
        };
        (0..n)
            .map(|i| generate_scene(&config, seed + i as u64).unwrap())
            .collect()
    }

    #[test]
    fn one_step_per_image_with_batch_one() {
        let mut model = CascadeModel::new(&small_arch(), 0).unwrap();
        let scenes = small_scenes(7, 0);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 1,
            optimizer: crate::optim::OptimizerKind::AdamW,
        };
        let log = train_detectors_joint(&mut model, &scenes, &cfg).unwrap();
        assert_eq!(log.steps.len(), 7);
        assert_eq!(log.epochs.len(), 1);
    }

    #[test]
    fn detector_training_is_deterministic() {
        let scenes = small_scenes(6, 5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 9,
            optimizer: crate::optim::OptimizerKind::AdamW,
        };
        let mut m1 = CascadeModel::new(&small_arch(), 4).unwrap();
        let mut m2 = CascadeModel::new(&small_arch(), 4).unwrap();
        train_detectors_joint(&mut m1, &scenes, &cfg).unwrap();
        train_detectors_joint(&mut m2, &scenes, &cfg).unwrap();
        assert_eq!(m1.flat_params(), m2.flat_params());
    }

    #[test]
    fn lower_median_conventions() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.0);
        assert!(lower_median(&[]).is_err());
    }

    #[test]
    fn identical_branches_give_zero_delta() {
        let arch = small_arch();
        let mut model = CascadeModel::new(&arch, 2).unwrap();
        // Copy detector 1 into detector 2 and cut the connection.
        model.b2 = model.b1.clone();
        model.d2 = model.d1.clone();
        model.g.zero_weights();
        let scenes = small_scenes(5, 30);
        let offset = calibrate_delta(&model, &scenes, "test").unwrap();
        assert_eq!(offset.delta, 0.0);
        assert_eq!(offset.size, 5);
    }

    #[test]
    fn zero_coeff_images_leave_router_unchanged() {
        let arch = small_arch();
        let mut model = CascadeModel::new(&arch, 3).unwrap();
        let scenes = small_scenes(4, 60);
        let inputs = precompute_router_inputs(&model, &scenes).unwrap();
        // Force L1 - L2 - offset = 0 via synthetic inputs.
        let forced: Vec<RouterInput> = inputs
            .into_iter()
            .map(|mut i| {
                i.l1 = 1.0;
                i.l2 = 1.0;
                i
            })
            .collect();
        let before = model.flat_params();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 1,
            lr: 0.05,
            weight_decay: 0.0,
            seed: 0,
            optimizer: crate::optim::OptimizerKind::AdamW,
        };
        run_router_descent(&mut model, &forced, 0.0, |phi, l1, l2| (1.0 - phi) * l1 + phi * l2, &cfg)
            .unwrap();
        assert_eq!(model.flat_params(), before);
    }

    #[test]
    fn router_phase_freezes_detectors() {
        let arch = small_arch();
        let mut model = CascadeModel::new(&arch, 8).unwrap();
        let scenes = small_scenes(6, 90);
        let mut detector_params = Vec::new();
        model.b1.visit_params("b1", &mut detector_params);
        model.d1.visit_params("d1", &mut detector_params);
        model.g.visit_params("g", &mut detector_params);
        model.b2.visit_params("b2", &mut detector_params);
        model.d2.visit_params("d2", &mut detector_params);
        let before: Vec<Vec<u64>> = detector_params
            .iter()
            .map(|(_, t)| t.iter().map(|v| v.to_bits()).collect())
            .collect();
        drop(detector_params);

        let delta = calibrate_delta(&model, &scenes, "test").unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            lr: 0.01,
            weight_decay: 5e-3,
            seed: 0,
            optimizer: crate::optim::OptimizerKind::AdamW,
        };
        train_router(&mut model, &delta, &scenes, &cfg).unwrap();

        let mut after_params = Vec::new();
        model.b1.visit_params("b1", &mut after_params);
        model.d1.visit_params("d1", &mut after_params);
        model.g.visit_params("g", &mut after_params);
        model.b2.visit_params("b2", &mut after_params);
        model.d2.visit_params("d2", &mut after_params);
        for ((_, t), bits) in after_params.iter().zip(&before) {
            let now: Vec<u64> = t.iter().map(|v| v.to_bits()).collect();
            assert_eq!(&now, bits, "detector parameters changed during router phase");
        }
    }

    #[test]
    fn random_phi_is_reproducible_and_in_range() {
        for seed in [0u64, 7, 123] {
            for id in [0u64, 1, 999_999] {
                let a = random_phi(seed, id);
                let b = random_phi(seed, id);
                assert_eq!(a, b);
                assert!(a > 0.0 && a < 1.0);
            }
        }
        assert_ne!(random_phi(0, 1), random_phi(0, 2));
        assert_ne!(random_phi(1, 1), random_phi(2, 1));
    }

    #[test]
    fn lambda_zero_matches_unconstrained() {
        let arch = small_arch();
        let scenes = small_scenes(5, 200);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr: 0.02,
            weight_decay: 0.0,
            seed: 0,
            optimizer: crate::optim::OptimizerKind::AdamW,
        };
        let mut m1 = CascadeModel::new(&arch, 11).unwrap();
        let mut m2 = CascadeModel::new(&arch, 11).unwrap();
        train_router_ablation(
            &mut m1,
            &scenes,
            &AblationConfig {
                strategy: RouterStrategy::Unconstrained,
                lambda: None,
            },
            &cfg,
        )
        .unwrap();
        train_router_ablation(
            &mut m2,
            &scenes,
            &AblationConfig {
                strategy: RouterStrategy::LambdaPenalty,
                lambda: Some(0.0),
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(m1.flat_params(), m2.flat_params());
    }

    #[test]
    fn ablation_config_validation() {
        assert!(AblationConfig {
            strategy: RouterStrategy::Proposed,
            lambda: Some(0.1)
        }
        .validate()
        .is_err());
        assert!(AblationConfig {
            strategy: RouterStrategy::LambdaPenalty,
            lambda: None
        }
        .validate()
        .is_err());
        assert!(AblationConfig {
            strategy: RouterStrategy::LambdaPenalty,
            lambda: Some(0.5)
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn loss_curve_rows_sorted_and_delta_zero_keeps_raw() {
        let arch = small_arch();
        let model = CascadeModel::new(&arch, 21).unwrap();
        let scenes = small_scenes(8, 400);
        let delta = DeltaOffset {
            delta: 0.0,
            computed_over: "test".into(),
            size: scenes.len(),
        };
        let rows = loss_curve_report(&model, &delta, &scenes).unwrap();
        assert_eq!(rows.len(), scenes.len());
        for row in &rows {
            assert_eq!(row.l1_adj, row.l1);
            assert_eq!(row.l2_adj, row.l2);
        }
        for pair in rows.windows(2) {
            assert!((pair[0].l1 - pair[0].l2) <= (pair[1].l1 - pair[1].l2));
        }
    }
}
