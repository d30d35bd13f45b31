//! Command-line surface over the library: data generation, the two training
//! phases, calibration, dynamic inference, sweeps, and reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cascadet::data::{generate_dataset, load_dataset};
use cascadet::det::checkpoint::{load_checkpoint, save_checkpoint};
use cascadet::det::{CascadeModel, Route};
use cascadet::infer::{
    calibrate_threshold, compute_k, difficulty_report, infer_dynamic, phi_scores,
    sweep_tradeoff, threshold_robustness,
};
use cascadet::pipeline::{
    hash_file, run_pipeline, write_detector_log, write_difficulty_csv, write_loss_curve_csv,
    write_robustness_csv, write_router_log, write_sweep_csv, RunConfig,
};
use cascadet::train::{
    calibrate_delta, loss_curve_report, train_detectors_joint, train_router,
    train_router_ablation, AblationConfig, AblationOutcome, DeltaOffset, RouterStrategy,
};

#[derive(Parser)]
#[command(name = "cascadet", version, about = "Cascaded detector with dynamic routing")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (JSON). Defaults to the built-in demo config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/val/test splits from the config.
    GenData,
    /// Phase one: jointly train both detectors and the connection.
    TrainDetectors,
    /// Median per-image loss difference between the detectors.
    CalibrateDelta,
    /// Phase two: train the router (or an ablation strategy).
    TrainRouter {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<RouterStrategy>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Threshold for a target hard fraction or latency budget.
    CalibrateThreshold {
        #[arg(long, conflicts_with = "target_latency")]
        k: Option<f64>,
        /// Target latency; interpreted against analytic per-route FLOPs.
        #[arg(long)]
        target_latency: Option<f64>,
    },
    /// Route one image and print detections plus the routing decision.
    Infer {
        #[arg(long)]
        tau: f64,
        /// Dataset split to read from: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Scene index within the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Accuracy/cost trade-off rows over a list of hard fractions.
    Sweep {
        /// Comma-separated hard fractions, e.g. "0,0.25,0.5,1".
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
    },
    /// Threshold stability against validation subsample size.
    Robustness,
    /// Scenes ranked by difficulty score with ground-truth statistics.
    DifficultyReport {
        #[arg(long, default_value_t = 10)]
        n_extremes: usize,
    },
    /// Analytic per-route MAC counts for the configured architecture.
    Flops,
    /// Run every stage end to end with per-stage resume.
    Pipeline,
}

fn parse_strategy(s: &str) -> Result<RouterStrategy, String> {
    match s {
        "proposed" => Ok(RouterStrategy::Proposed),
        "unconstrained" => Ok(RouterStrategy::Unconstrained),
        "lambda" => Ok(RouterStrategy::LambdaPenalty),
        "random" => Ok(RouterStrategy::Random),
        "ap-based" => Ok(RouterStrategy::ApBased),
        other => Err(format!(
            "unknown strategy {other}; expected proposed|unconstrained|lambda|random|ap-based"
        )),
    }
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_json_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
        cfg.detector_phase.seed = seed;
        cfg.router_phase.seed = seed;
    }
    if let Some(out) = &global.out {
        // Keep generated data underneath the overridden output directory
        // when the config did not pin explicit dataset paths elsewhere.
        let default = RunConfig::default();
        if cfg.data.train_dir == default.data.train_dir {
            cfg.data.train_dir = out.join("data/train");
            cfg.data.val_dir = out.join("data/val");
            cfg.data.test_dir = out.join("data/test");
        }
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn load_model(cfg: &RunConfig, name: &str) -> anyhow::Result<CascadeModel> {
    let path = cfg.out_dir.join(name);
    load_checkpoint(&path, &cfg.arch).with_context(|| format!("loading {}", path.display()))
}

fn split_dir(cfg: &RunConfig, split: &str) -> anyhow::Result<PathBuf> {
    Ok(match split {
        "train" => cfg.data.train_dir.clone(),
        "val" => cfg.data.val_dir.clone(),
        "test" => cfg.data.test_dir.clone(),
        other => bail!("unknown split {other}; expected train|val|test"),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::GenData => {
            let gen = cfg
                .data
                .generate
                .as_ref()
                .context("config has no `data.generate` section")?;
            generate_dataset(&gen.scene, gen.train_n, cfg.seed, &cfg.data.train_dir)?;
            generate_dataset(&gen.scene, gen.val_n, cfg.seed + 1_000_000, &cfg.data.val_dir)?;
            generate_dataset(&gen.scene, gen.test_n, cfg.seed + 2_000_000, &cfg.data.test_dir)?;
            println!(
                "wrote {} train / {} val / {} test scenes",
                gen.train_n, gen.val_n, gen.test_n
            );
        }
        Command::TrainDetectors => {
            let (_, scenes) = load_dataset(&cfg.data.train_dir)?;
            let mut model = CascadeModel::new(&cfg.arch, cfg.seed)?;
            let log = train_detectors_joint(&mut model, &scenes, &cfg.detector_phase)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            save_checkpoint(&model, &cfg.out_dir.join("detectors.ckpt"))?;
            write_detector_log(
                &log,
                &cfg.out_dir.join("train_detectors_steps.csv"),
                &cfg.out_dir.join("train_detectors_epochs.csv"),
            )?;
            let last = log.epochs.last().unwrap();
            println!(
                "trained detectors: {} steps, final mean loss {:.4} (l1 {:.4}, l2 {:.4})",
                log.steps.len(),
                last.mean_total,
                last.mean_l1,
                last.mean_l2
            );
        }
        Command::CalibrateDelta => {
            let model = load_model(&cfg, "detectors.ckpt")?;
            let (_, scenes) = load_dataset(&cfg.data.train_dir)?;
            let delta = calibrate_delta(&model, &scenes, &cfg.data.train_dir.to_string_lossy())?;
            let path = cfg.out_dir.join("delta.json");
            std::fs::write(&path, serde_json::to_string_pretty(&delta)?)?;
            println!("delta = {} over {} images", delta.delta, delta.size);
        }
        Command::TrainRouter { strategy, lambda } => {
            let mut model = load_model(&cfg, "detectors.ckpt")?;
            let (_, scenes) = load_dataset(&cfg.data.train_dir)?;
            let strategy = strategy.unwrap_or(cfg.strategy.strategy);
            let delta: DeltaOffset =
                serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join("delta.json"))?)?;
            let log = match strategy {
                RouterStrategy::Proposed => {
                    train_router(&mut model, &delta, &scenes, &cfg.router_phase)?
                }
                _ => {
                    model.delta = delta.delta;
                    let ab = AblationConfig {
                        strategy,
                        lambda: lambda.or(cfg.strategy.lambda),
                    };
                    match train_router_ablation(&mut model, &scenes, &ab, &cfg.router_phase)? {
                        AblationOutcome::Trained(log) => log,
                        AblationOutcome::RandomScorer { seed } => {
                            println!("random strategy: scorer seed {seed}, router left at init");
                            Default::default()
                        }
                    }
                }
            };
            save_checkpoint(&model, &cfg.out_dir.join("model.ckpt"))?;
            write_router_log(
                &log,
                &cfg.out_dir.join("train_router_steps.csv"),
                &cfg.out_dir.join("train_router_epochs.csv"),
            )?;
            if let Some(e) = log.epochs.last() {
                println!(
                    "trained router ({}): mean phi {:.4}, mean loss {:.4}",
                    strategy.name(),
                    e.mean_phi,
                    e.mean_loss
                );
            }
        }
        Command::CalibrateThreshold { k, target_latency } => {
            let model = load_model(&cfg, "model.ckpt")?;
            let k = match (k, target_latency) {
                (Some(k), None) => k,
                (None, Some(lat_t)) => {
                    let lat1 = model.count_flops(Route::Easy) as f64;
                    let lat2 = model.count_flops(Route::Hard) as f64;
                    compute_k(lat1, lat2, lat_t)?
                }
                _ => bail!("pass exactly one of --k or --target-latency"),
            };
            let (_, scenes) = load_dataset(&cfg.data.val_dir)?;
            let scores = phi_scores(&model, &scenes)?;
            let tau = calibrate_threshold(&scores, k)?;
            println!("k = {k} -> tau = {tau}");
        }
        Command::Infer { tau, split, index } => {
            let model = load_model(&cfg, "model.ckpt")?;
            let dir = split_dir(&cfg, &split)?;
            let scene = cascadet::data::load_scene(&dir, index)?;
            let (dets, decision) = infer_dynamic(&model, tau, &scene, &cfg.decode)?;
            println!(
                "scene {}: phi = {:.6}, route = {}, flops = {}, wall = {:.3} ms",
                scene.scene_id,
                decision.phi,
                decision.route.name(),
                decision.flops,
                decision.wall_time * 1e3
            );
            for d in &dets {
                println!(
                    "  class {} score {:.4} box ({:.2}, {:.2}, {:.2}, {:.2})",
                    d.class_id, d.score, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h
                );
            }
        }
        Command::Sweep { k_list } => {
            let model = load_model(&cfg, "model.ckpt")?;
            let (_, val) = load_dataset(&cfg.data.val_dir)?;
            let (_, test) = load_dataset(&cfg.data.test_dir)?;
            let ks = k_list.unwrap_or_else(|| cfg.k_list.clone());
            let rows = sweep_tradeoff(&model, &test, &val, &ks, &cfg.decode, cfg.timing)?;
            write_sweep_csv(&rows, &cfg.out_dir.join("sweep.csv"))?;
            println!("k,tau,ap,mean_flops,mean_latency_ms,hard_fraction");
            for r in &rows {
                println!(
                    "{},{:.6},{:.4},{:.0},{:.4},{:.4}",
                    r.k, r.tau, r.ap, r.mean_flops, r.mean_latency_ms, r.hard_fraction
                );
            }
        }
        Command::Robustness => {
            let model = load_model(&cfg, "model.ckpt")?;
            let (_, val) = load_dataset(&cfg.data.val_dir)?;
            let (_, test) = load_dataset(&cfg.data.test_dir)?;
            let val_scores = phi_scores(&model, &val)?;
            let test_scores = phi_scores(&model, &test)?;
            let sizes: Vec<usize> = cfg
                .robustness
                .sizes
                .iter()
                .copied()
                .filter(|&s| s <= val_scores.len())
                .collect();
            let rows = threshold_robustness(
                &val_scores,
                &sizes,
                cfg.robustness.k,
                &test_scores,
                cfg.robustness.resamples,
                cfg.seed,
            )?;
            write_robustness_csv(&rows, &cfg.out_dir.join("robustness.csv"))?;
            println!("wrote robustness.csv with {} rows", rows.len());
        }
        Command::DifficultyReport { n_extremes } => {
            let model = load_model(&cfg, "model.ckpt")?;
            let (_, test) = load_dataset(&cfg.data.test_dir)?;
            let report = difficulty_report(&model, &test, n_extremes)?;
            write_difficulty_csv(&report.rows, &cfg.out_dir.join("difficulty.csv"))?;
            // Loss-curve report alongside, over the training split.
            let delta: DeltaOffset =
                serde_json::from_str(&std::fs::read_to_string(cfg.out_dir.join("delta.json"))?)?;
            let (_, train) = load_dataset(&cfg.data.train_dir)?;
            let rows = loss_curve_report(&model, &delta, &train)?;
            write_loss_curve_csv(&rows, &cfg.out_dir.join("loss_curve.csv"))?;
            println!("easiest scenes: {:?}", report.easiest);
            println!("hardest scenes: {:?}", report.hardest);
        }
        Command::Flops => {
            let model = CascadeModel::new(&cfg.arch, cfg.seed)?;
            let easy = model.count_flops(Route::Easy);
            let hard = model.count_flops(Route::Hard);
            let router = model.router.macs();
            println!("easy route:  {easy} MACs");
            println!("hard route:  {hard} MACs");
            println!("router:      {router} MACs");
            println!("router/easy: {:.3e}", router as f64 / easy as f64);
        }
        Command::Pipeline => {
            let report = run_pipeline(&cfg)?;
            println!(
                "pipeline done: ran {:?}, skipped {:?}",
                report.stages_run, report.stages_skipped
            );
            let manifest = cfg.out_dir.join("run_manifest.json");
            if manifest.exists() {
                println!("manifest hash: {}", hash_file(&manifest)?);
            }
        }
    }
    Ok(())
}
