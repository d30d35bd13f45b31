// Scratch experiment used while sizing the acceptance fixture.
use std::path::Path;
use std::time::Instant;

use cascadet::data::scene::{generate_scene, SceneConfig};
use cascadet::det::checkpoint::{load_checkpoint, save_checkpoint};
use cascadet::det::{ArchConfig, CascadeModel};
use cascadet::eval::{evaluate_ap, spearman};
use cascadet::infer::{calibrate_threshold, infer_dynamic, infer_with_random_routing, phi_scores, DecodeConfig};
use cascadet::optim::{OptimizerKind, TrainConfig};
use cascadet::train::*;

fn scenes(cfg: &SceneConfig, n: usize, seed: u64) -> Vec<cascadet::data::SyntheticScene> {
    (0..n).map(|i| generate_scene(cfg, seed + i as u64).unwrap()).collect()
}

fn main() {
    let arch = ArchConfig {
        image_size: 32,
        levels: 3,
        base_channels: 8,
        stem_channels: 8,
        num_classes: 3,
    };
    let scene_cfg = SceneConfig {
        image_size: 32,
        num_objects_range: (1, 6),
        size_range: (0.18, 0.55),
        max_overlap_iou: 0.5,
        noise_sigma: 0.03,
        num_classes: 3,
    };
    let train = scenes(&scene_cfg, 2000, 0);
    let val = scenes(&scene_cfg, 2000, 1_000_000);
    let test = scenes(&scene_cfg, 2000, 2_000_000);
    let decode = DecodeConfig::default();

    let ckpt = Path::new("target/calib_detectors.ckpt");
    let model = if ckpt.exists() {
        println!("loading cached detectors");
        load_checkpoint(ckpt, &arch).unwrap()
    } else {
        let mut model = CascadeModel::new(&arch, 42).unwrap();
        let det_cfg = TrainConfig {
            epochs: 14,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 1e-4,
            seed: 1,
            optimizer: OptimizerKind::AdamW,
        };
        let t0 = Instant::now();
        let log = train_detectors_joint(&mut model, &train, &det_cfg).unwrap();
        let last = log.epochs.last().unwrap();
        println!(
            "detector training: {:.1}s, final l1 {:.4} l2 {:.4}",
            t0.elapsed().as_secs_f64(),
            last.mean_l1,
            last.mean_l2
        );
        save_checkpoint(&model, ckpt).unwrap();
        model
    };

    let losses = branch_losses_batch(&model, &train).unwrap();
    let gaps: Vec<f64> = losses.iter().map(|(l1, l2)| l1 - l2).collect();
    let frac_l2_better = gaps.iter().filter(|&&g| g > 0.0).count() as f64 / gaps.len() as f64;
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let delta = calibrate_delta(&model, &train, "train").unwrap();
    println!("frac L2<L1 {frac_l2_better:.3}, mean gap {mean_gap:.4}, delta {:.4}", delta.delta);

    // Is the gap monotone in scene complexity?
    let train_counts: Vec<f64> = train.iter().map(|s| s.boxes.len() as f64).collect();
    println!("rho(gap, count) on train: {:.4}", spearman(&gaps, &train_counts).unwrap());
    let mut order: Vec<usize> = (0..gaps.len()).collect();
    order.sort_by(|&a, &b| gaps[a].total_cmp(&gaps[b]));
    let low50: f64 = order[..50].iter().map(|&i| train_counts[i]).sum::<f64>() / 50.0;
    let hi50: f64 = order[order.len() - 50..].iter().map(|&i| train_counts[i]).sum::<f64>() / 50.0;
    println!("mean count in lowest/highest 50 gaps: {low50:.2} / {hi50:.2}");

    let counts: Vec<f64> = test.iter().map(|s| s.boxes.len() as f64).collect();

    for (name, opt, lr, wd, epochs) in [
        ("adamw lr1e-3 wd0.2 e12", OptimizerKind::AdamW, 1e-3, 0.2, 12usize),
        ("adamw lr1e-3 wd0.5 e12", OptimizerKind::AdamW, 1e-3, 0.5, 12),
        ("adamw lr2e-3 wd0.5 e12", OptimizerKind::AdamW, 2e-3, 0.5, 12),
        ("adamw lr1e-3 wd1.0 e12", OptimizerKind::AdamW, 1e-3, 1.0, 12),
    ] {
        let router_cfg = TrainConfig {
            epochs,
            batch_size: 1,
            lr,
            weight_decay: wd,
            seed: 2,
            optimizer: opt,
        };
        let mut m = model.clone();
        train_router(&mut m, &delta, &train, &router_cfg).unwrap();
        let train_phis = phi_scores(&m, &train).unwrap();
        let hard_frac = train_phis.iter().filter(|&&p| p > 0.5).count() as f64 / train_phis.len() as f64;
        let lo = train_phis.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = train_phis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rho_gap = spearman(&train_phis, &gaps).unwrap_or(0.0);
        let test_phis = phi_scores(&m, &test).unwrap();
        let rho_count = spearman(&test_phis, &counts).unwrap_or(0.0);
        println!(
            "{name}: hard@0.5 {hard_frac:.3}, phi [{lo:.3},{hi:.3}], rho(gap) {rho_gap:.3}, rho(count) {rho_count:.3}"
        );

        if rho_gap > 0.15 && (0.3..=0.7).contains(&hard_frac) {
            let val_scores = phi_scores(&m, &val).unwrap();
            let tau = calibrate_threshold(&val_scores, 0.5).unwrap();
            let proposed: Vec<_> = test
                .iter()
                .map(|s| infer_dynamic(&m, tau, s, &decode).unwrap().0)
                .collect();
            let proposed_ap = evaluate_ap(&proposed, &test, 3).unwrap().ap;
            let mut wins = 0;
            let mut improvements = Vec::new();
            for seed in 0..5u64 {
                let rtau = {
                    let scores: Vec<f64> = test.iter().map(|s| random_phi(seed, s.scene_id)).collect();
                    calibrate_threshold(&scores, 0.5).unwrap()
                };
                let dets: Vec<_> = test
                    .iter()
                    .map(|s| infer_with_random_routing(&m, seed, rtau, s, &decode).unwrap().0)
                    .collect();
                let ap = evaluate_ap(&dets, &test, 3).unwrap().ap;
                if proposed_ap >= ap {
                    wins += 1;
                }
                improvements.push(proposed_ap - ap);
            }
            let mean_impr = improvements.iter().sum::<f64>() / 5.0;
            println!("    AP {proposed_ap:.4}, wins {wins}/5, mean improvement {mean_impr:.4}");
        }
    }

    let easy_only: Vec<_> = test.iter().map(|s| infer_dynamic(&model, 1.0, s, &decode).unwrap().0).collect();
    let hard_only: Vec<_> = test.iter().map(|s| infer_dynamic(&model, 0.0, s, &decode).unwrap().0).collect();
    println!(
        "AP easy-only {:.4}, AP full-cascade {:.4}",
        evaluate_ap(&easy_only, &test, 3).unwrap().ap,
        evaluate_ap(&hard_only, &test, 3).unwrap().ap
    );
}
