//! End-to-end experiment pipeline: data generation, both training phases,
//! threshold calibration, the trade-off sweep, and reports, with per-stage
//! resume and a manifest of config and input hashes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_dataset, load_dataset, SceneConfig, SyntheticScene};
use crate::det::checkpoint::{load_checkpoint, save_checkpoint};
use crate::det::{ArchConfig, CascadeModel};
use crate::error::{Error, Result};
use crate::infer::{
    difficulty_report, phi_scores, sweep_threshold, sweep_tradeoff, threshold_robustness,
    DecodeConfig, TimingMode,
};
use crate::optim::TrainConfig;
use crate::train::{
    calibrate_delta, loss_curve_report, train_detectors_joint, train_router,
    train_router_ablation, AblationConfig, AblationOutcome, DeltaOffset, DetectorTrainLog,
    RouterStrategy, RouterTrainLog,
};

/// Seed offsets keeping the three splits' scene-id ranges disjoint.
const VAL_SEED_OFFSET: u64 = 1_000_000;
const TEST_SEED_OFFSET: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSplits {
    pub scene: SceneConfig,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// When present, the pipeline generates the splits into the dirs below.
    pub generate: Option<GenSplits>,
    pub train_dir: PathBuf,
    pub val_dir: PathBuf,
    pub test_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub sizes: Vec<usize>,
    pub k: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub arch: ArchConfig,
    pub data: DataConfig,
    pub detector_phase: TrainConfig,
    pub router_phase: TrainConfig,
    pub strategy: AblationConfig,
    pub decode: DecodeConfig,
    pub k_list: Vec<f64>,
    pub robustness: RobustnessConfig,
    pub n_extremes: usize,
    pub timing: TimingMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchConfig {
            image_size: 32,
            levels: 3,
            base_channels: 8,
            stem_channels: 8,
            num_classes: 3,
        };
        let scene = SceneConfig {
            image_size: 32,
            ..SceneConfig::default()
        };
        let mut router_phase = TrainConfig::router_default();
        // Loss gaps on the synthetic task are small; a constant 2e-2 keeps
        // the two-epoch budget meaningful at this scale.
        router_phase.lr = 2e-2;
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/demo"),
            arch,
            data: DataConfig {
                generate: Some(GenSplits {
                    scene,
                    train_n: 600,
                    val_n: 400,
                    test_n: 400,
                }),
                train_dir: PathBuf::from("runs/demo/data/train"),
                val_dir: PathBuf::from("runs/demo/data/val"),
                test_dir: PathBuf::from("runs/demo/data/test"),
            },
            detector_phase: TrainConfig::detector_default(),
            router_phase,
            strategy: AblationConfig {
                strategy: RouterStrategy::Proposed,
                lambda: None,
            },
            decode: DecodeConfig::default(),
            k_list: vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0],
            robustness: RobustnessConfig {
                sizes: vec![50, 100, 200, 400],
                k: 0.5,
                resamples: 10,
            },
            n_extremes: 10,
            timing: TimingMode::Analytic,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.detector_phase.validate()?;
        self.router_phase.validate()?;
        self.strategy.validate()?;
        if let Some(gen) = &self.data.generate {
            gen.scene.validate()?;
            if gen.scene.image_size != self.arch.image_size {
                return Err(Error::InvalidConfig(format!(
                    "scene image_size {} does not match arch image_size {}",
                    gen.scene.image_size, self.arch.image_size
                )));
            }
            if gen.train_n == 0 || gen.val_n == 0 || gen.test_n == 0 {
                return Err(Error::InvalidConfig("split sizes must be >= 1".into()));
            }
            let max_n = gen.train_n.max(gen.val_n).max(gen.test_n) as u64;
            if max_n >= VAL_SEED_OFFSET {
                return Err(Error::InvalidConfig(
                    "split sizes must stay below the split seed offset".into(),
                ));
            }
        }
        for &k in &self.k_list {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::InvalidConfig(format!("k {k} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex_digest(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: std::collections::BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub completed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    fn load_or_new(path: &Path, config_hash: &str) -> Self {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
                if manifest.config_hash == config_hash {
                    return manifest;
                }
            }
        }
        RunManifest {
            config_hash: config_hash.to_string(),
            stages: Vec::new(),
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(Error::io(path))
    }

    fn stage_done(&self, name: &str, out_dir: &Path) -> bool {
        self.stages.iter().any(|s| {
            s.name == name
                && s.completed
                && s.outputs.iter().all(|o| out_dir.join(o).exists())
        })
    }

    fn record(&mut self, record: StageRecord) {
        self.stages.retain(|s| s.name != record.name);
        self.stages.push(record);
    }
}

/// CSV writing with `Display` float formatting (shortest round-trip form),
/// so identical runs produce identical bytes.
pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &str) -> Self {
        CsvWriter {
            buf: format!("{header}\n"),
        }
    }

    pub fn row(&mut self, fields: &[CsvField]) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            match f {
                CsvField::U(v) => write!(self.buf, "{v}").unwrap(),
                CsvField::F(v) => write!(self.buf, "{v}").unwrap(),
            }
        }
        self.buf.push('\n');
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        fs::write(path, &self.buf).map_err(Error::io(path))
    }
}

pub enum CsvField {
    U(u64),
    F(f64),
}

pub fn write_detector_log(log: &DetectorTrainLog, steps_path: &Path, epochs_path: &Path) -> Result<()> {
    let mut steps = CsvWriter::new("step,l1,l2,total");
    for s in &log.steps {
        steps.row(&[
            CsvField::U(s.step as u64),
            CsvField::F(s.l1),
            CsvField::F(s.l2),
            CsvField::F(s.total),
        ]);
    }
    steps.write_to(steps_path)?;
    let mut epochs = CsvWriter::new("epoch,mean_l1,mean_l2,mean_total");
    for e in &log.epochs {
        epochs.row(&[
            CsvField::U(e.epoch as u64),
            CsvField::F(e.mean_l1),
            CsvField::F(e.mean_l2),
            CsvField::F(e.mean_total),
        ]);
    }
    epochs.write_to(epochs_path)
}

pub fn write_router_log(log: &RouterTrainLog, steps_path: &Path, epochs_path: &Path) -> Result<()> {
    let mut steps = CsvWriter::new("step,l1,l2,phi,loss");
    for s in &log.steps {
        steps.row(&[
            CsvField::U(s.step as u64),
            CsvField::F(s.l1),
            CsvField::F(s.l2),
            CsvField::F(s.phi),
            CsvField::F(s.loss),
        ]);
    }
    steps.write_to(steps_path)?;
    let mut epochs = CsvWriter::new("epoch,mean_phi,mean_loss");
    for e in &log.epochs {
        epochs.row(&[
            CsvField::U(e.epoch as u64),
            CsvField::F(e.mean_phi),
            CsvField::F(e.mean_loss),
        ]);
    }
    epochs.write_to(epochs_path)
}

pub struct PipelineReport {
    pub stages_run: Vec<String>,
    pub stages_skipped: Vec<String>,
}

struct PipelineCtx {
    cfg: RunConfig,
    manifest: RunManifest,
    manifest_path: PathBuf,
    report: PipelineReport,
    train: Option<Vec<SyntheticScene>>,
    val: Option<Vec<SyntheticScene>>,
    test: Option<Vec<SyntheticScene>>,
}

impl PipelineCtx {
    fn train_scenes(&mut self) -> Result<&[SyntheticScene]> {
        if self.train.is_none() {
            let (_, scenes) = load_dataset(&self.cfg.data.train_dir)?;
            self.train = Some(scenes);
        }
        Ok(self.train.as_ref().unwrap())
    }

    fn val_scenes(&mut self) -> Result<&[SyntheticScene]> {
        if self.val.is_none() {
            let (_, scenes) = load_dataset(&self.cfg.data.val_dir)?;
            self.val = Some(scenes);
        }
        Ok(self.val.as_ref().unwrap())
    }

    fn test_scenes(&mut self) -> Result<&[SyntheticScene]> {
        if self.test.is_none() {
            let (_, scenes) = load_dataset(&self.cfg.data.test_dir)?;
            self.test = Some(scenes);
        }
        Ok(self.test.as_ref().unwrap())
    }

    fn finish_stage(
        &mut self,
        name: &str,
        inputs: Vec<(String, String)>,
        outputs: Vec<String>,
    ) -> Result<()> {
        self.manifest.record(StageRecord {
            name: name.to_string(),
            inputs: inputs.into_iter().collect(),
            outputs,
            completed: true,
        });
        self.manifest.save(&self.manifest_path)?;
        self.report.stages_run.push(name.to_string());
        Ok(())
    }
}

/// Runs every stage in order, skipping stages whose outputs already exist
/// under the same config hash. Stage failures abort with the stage name.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;
    let manifest_path = cfg.out_dir.join("run_manifest.json");
    let manifest = RunManifest::load_or_new(&manifest_path, &cfg.config_hash());

    let mut ctx = PipelineCtx {
        cfg: cfg.clone(),
        manifest,
        manifest_path,
        report: PipelineReport {
            stages_run: Vec::new(),
            stages_skipped: Vec::new(),
        },
        train: None,
        val: None,
        test: None,
    };

    if ctx.cfg.data.generate.is_some() {
        run_stage(&mut ctx, "gen-data", stage_gen_data)?;
    }
    run_stage(&mut ctx, "train-detectors", stage_train_detectors)?;
    run_stage(&mut ctx, "calibrate-delta", stage_calibrate_delta)?;
    run_stage(&mut ctx, "train-router", stage_train_router)?;
    run_stage(&mut ctx, "calibrate-threshold", stage_calibrate_threshold)?;
    run_stage(&mut ctx, "sweep", stage_sweep)?;
    run_stage(&mut ctx, "reports", stage_reports)?;
    Ok(ctx.report)
}

fn run_stage(
    ctx: &mut PipelineCtx,
    name: &'static str,
    body: fn(&mut PipelineCtx, &'static str) -> Result<()>,
) -> Result<()> {
    if ctx.manifest.stage_done(name, &ctx.cfg.out_dir) {
        ctx.report.stages_skipped.push(name.to_string());
        return Ok(());
    }
    body(ctx, name).map_err(Error::in_stage(name))
}

fn rel_outputs(outputs: &[&str]) -> Vec<String> {
    outputs.iter().map(|s| s.to_string()).collect()
}

fn stage_gen_data(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let gen = ctx.cfg.data.generate.clone().expect("stage gated on generate");
    let seed = ctx.cfg.seed;
    generate_dataset(&gen.scene, gen.train_n, seed, &ctx.cfg.data.train_dir)?;
    generate_dataset(&gen.scene, gen.val_n, seed + VAL_SEED_OFFSET, &ctx.cfg.data.val_dir)?;
    generate_dataset(&gen.scene, gen.test_n, seed + TEST_SEED_OFFSET, &ctx.cfg.data.test_dir)?;
    ctx.train = None;
    ctx.val = None;
    ctx.test = None;

    let inputs = vec![("scene_config".to_string(), hex_digest(serde_json::to_string(&gen)?.as_bytes()))];
    // Outputs live outside out_dir in general; record the manifests we can see.
    let outputs: Vec<String> = [
        &ctx.cfg.data.train_dir,
        &ctx.cfg.data.val_dir,
        &ctx.cfg.data.test_dir,
    ]
    .iter()
    .filter_map(|d| {
        let p = d.join("manifest.json");
        pathdiff_under(&ctx.cfg.out_dir, &p)
    })
    .collect();
    ctx.finish_stage(name, inputs, outputs)
}

/// Relative path under `base` if `path` is inside it.
fn pathdiff_under(base: &Path, path: &Path) -> Option<String> {
    path.strip_prefix(base)
        .ok()
        .map(|p| p.to_string_lossy().into_owned())
}

fn stage_train_detectors(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let train_manifest_hash = hash_file(&ctx.cfg.data.train_dir.join("manifest.json"))?;
    let mut model = CascadeModel::new(&ctx.cfg.arch, ctx.cfg.seed)?;
    let cfg = ctx.cfg.clone();
    let scenes = ctx.train_scenes()?;
    let log = train_detectors_joint(&mut model, scenes, &cfg.detector_phase)?;

    save_checkpoint(&model, &cfg.out_dir.join("detectors.ckpt"))?;
    write_detector_log(
        &log,
        &cfg.out_dir.join("train_detectors_steps.csv"),
        &cfg.out_dir.join("train_detectors_epochs.csv"),
    )?;
    ctx.finish_stage(
        name,
        vec![("train_manifest".to_string(), train_manifest_hash)],
        rel_outputs(&[
            "detectors.ckpt",
            "train_detectors_steps.csv",
            "train_detectors_epochs.csv",
        ]),
    )
}

fn stage_calibrate_delta(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ckpt = cfg.out_dir.join("detectors.ckpt");
    let ckpt_hash = hash_file(&ckpt)?;
    let model = load_checkpoint(&ckpt, &cfg.arch)?;
    let scenes = ctx.train_scenes()?;
    let label = cfg.data.train_dir.to_string_lossy().into_owned();
    let delta = calibrate_delta(&model, scenes, &label)?;
    let path = cfg.out_dir.join("delta.json");
    fs::write(&path, serde_json::to_string_pretty(&delta)?).map_err(Error::io(&path))?;
    ctx.finish_stage(
        name,
        vec![("detectors_ckpt".to_string(), ckpt_hash)],
        rel_outputs(&["delta.json"]),
    )
}

fn load_delta(path: &Path) -> Result<DeltaOffset> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn stage_train_router(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ckpt = cfg.out_dir.join("detectors.ckpt");
    let delta_path = cfg.out_dir.join("delta.json");
    let inputs = vec![
        ("detectors_ckpt".to_string(), hash_file(&ckpt)?),
        ("delta".to_string(), hash_file(&delta_path)?),
    ];
    let mut model = load_checkpoint(&ckpt, &cfg.arch)?;
    let delta = load_delta(&delta_path)?;
    let scenes = ctx.train_scenes()?;

    let log = match cfg.strategy.strategy {
        RouterStrategy::Proposed => train_router(&mut model, &delta, scenes, &cfg.router_phase)?,
        _ => {
            model.delta = delta.delta;
            match train_router_ablation(&mut model, scenes, &cfg.strategy, &cfg.router_phase)? {
                AblationOutcome::Trained(log) => log,
                AblationOutcome::RandomScorer { .. } => RouterTrainLog::default(),
            }
        }
    };

    save_checkpoint(&model, &cfg.out_dir.join("model.ckpt"))?;
    write_router_log(
        &log,
        &cfg.out_dir.join("train_router_steps.csv"),
        &cfg.out_dir.join("train_router_epochs.csv"),
    )?;
    ctx.finish_stage(
        name,
        inputs,
        rel_outputs(&["model.ckpt", "train_router_steps.csv", "train_router_epochs.csv"]),
    )
}

fn stage_calibrate_threshold(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ckpt = cfg.out_dir.join("model.ckpt");
    let ckpt_hash = hash_file(&ckpt)?;
    let model = load_checkpoint(&ckpt, &cfg.arch)?;
    let scenes = ctx.val_scenes()?;
    let scores = phi_scores(&model, scenes)?;
    let mut csv = CsvWriter::new("k,tau");
    for &k in &cfg.k_list {
        let tau = sweep_threshold(&scores, k)?;
        csv.row(&[CsvField::F(k), CsvField::F(tau)]);
    }
    csv.write_to(&cfg.out_dir.join("thresholds.csv"))?;
    ctx.finish_stage(
        name,
        vec![("model_ckpt".to_string(), ckpt_hash)],
        rel_outputs(&["thresholds.csv"]),
    )
}

fn stage_sweep(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ckpt = cfg.out_dir.join("model.ckpt");
    let ckpt_hash = hash_file(&ckpt)?;
    let model = load_checkpoint(&ckpt, &cfg.arch)?;
    ctx.val_scenes()?;
    ctx.test_scenes()?;
    let val = ctx.val.as_ref().unwrap();
    let test = ctx.test.as_ref().unwrap();
    let rows = sweep_tradeoff(&model, test, val, &cfg.k_list, &cfg.decode, cfg.timing)?;
    write_sweep_csv(&rows, &cfg.out_dir.join("sweep.csv"))?;
    ctx.finish_stage(
        name,
        vec![("model_ckpt".to_string(), ckpt_hash)],
        rel_outputs(&["sweep.csv"]),
    )
}

pub fn write_sweep_csv(rows: &[crate::infer::TradeOffPoint], path: &Path) -> Result<()> {
    let mut csv = CsvWriter::new("k,tau,ap,mean_flops,mean_latency_ms,hard_fraction");
    for r in rows {
        csv.row(&[
            CsvField::F(r.k),
            CsvField::F(r.tau),
            CsvField::F(r.ap),
            CsvField::F(r.mean_flops),
            CsvField::F(r.mean_latency_ms),
            CsvField::F(r.hard_fraction),
        ]);
    }
    csv.write_to(path)
}

pub fn write_robustness_csv(rows: &[crate::infer::RobustnessRow], path: &Path) -> Result<()> {
    let mut csv = CsvWriter::new("val_size,tau_val,tau_ref,abs_dev,achieved_hard_fraction");
    for r in rows {
        csv.row(&[
            CsvField::U(r.val_size as u64),
            CsvField::F(r.tau_val),
            CsvField::F(r.tau_ref),
            CsvField::F(r.abs_dev),
            CsvField::F(r.achieved_hard_fraction),
        ]);
    }
    csv.write_to(path)
}

pub fn write_difficulty_csv(rows: &[crate::infer::DifficultyRow], path: &Path) -> Result<()> {
    let mut csv = CsvWriter::new("scene_id,phi,num_objects,mean_size,max_pair_iou");
    for r in rows {
        csv.row(&[
            CsvField::U(r.scene_id),
            CsvField::F(r.phi),
            CsvField::U(r.num_objects as u64),
            CsvField::F(r.mean_size),
            CsvField::F(r.max_pair_iou),
        ]);
    }
    csv.write_to(path)
}

pub fn write_loss_curve_csv(rows: &[crate::train::LossCurveRow], path: &Path) -> Result<()> {
    let mut csv = CsvWriter::new("scene_id,l1,l2,l1_adj,l2_adj,phi");
    for r in rows {
        csv.row(&[
            CsvField::U(r.scene_id),
            CsvField::F(r.l1),
            CsvField::F(r.l2),
            CsvField::F(r.l1_adj),
            CsvField::F(r.l2_adj),
            CsvField::F(r.phi),
        ]);
    }
    csv.write_to(path)
}

fn stage_reports(ctx: &mut PipelineCtx, name: &'static str) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let ckpt = cfg.out_dir.join("model.ckpt");
    let ckpt_hash = hash_file(&ckpt)?;
    let model = load_checkpoint(&ckpt, &cfg.arch)?;
    let delta = load_delta(&cfg.out_dir.join("delta.json"))?;

    let rows = {
        let train = ctx.train_scenes()?;
        loss_curve_report(&model, &delta, train)?
    };
    write_loss_curve_csv(&rows, &cfg.out_dir.join("loss_curve.csv"))?;

    ctx.val_scenes()?;
    ctx.test_scenes()?;
    let val = ctx.val.as_ref().unwrap();
    let test = ctx.test.as_ref().unwrap();
    let val_scores = phi_scores(&model, val)?;
    let test_scores = phi_scores(&model, test)?;
    let sizes: Vec<usize> = cfg
        .robustness
        .sizes
        .iter()
        .copied()
        .filter(|&s| s <= val_scores.len())
        .collect();
    let rob = threshold_robustness(
        &val_scores,
        &sizes,
        cfg.robustness.k,
        &test_scores,
        cfg.robustness.resamples,
        cfg.seed,
    )?;
    write_robustness_csv(&rob, &cfg.out_dir.join("robustness.csv"))?;

    let difficulty = difficulty_report(&model, test, cfg.n_extremes)?;
    write_difficulty_csv(&difficulty.rows, &cfg.out_dir.join("difficulty.csv"))?;

    ctx.finish_stage(
        name,
        vec![("model_ckpt".to_string(), ckpt_hash)],
        rel_outputs(&["loss_curve.csv", "robustness.csv", "difficulty.csv"]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out_dir = root.join("run");
        cfg.data.train_dir = root.join("run/data/train");
        cfg.data.val_dir = root.join("run/data/val");
        cfg.data.test_dir = root.join("run/data/test");
        if let Some(gen) = cfg.data.generate.as_mut() {
            gen.train_n = 12;
            gen.val_n = 10;
            gen.test_n = 10;
        }
        cfg.detector_phase.epochs = 1;
        cfg.detector_phase.batch_size = 4;
        cfg.router_phase.epochs = 1;
        cfg.k_list = vec![0.0, 0.5, 1.0];
        cfg.robustness.sizes = vec![5, 10];
        cfg.robustness.resamples = 2;
        cfg
    }

    #[test]
    fn pipeline_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.stages_run.len(), 7);
        assert!(report.stages_skipped.is_empty());

        // Second invocation skips everything.
        let report = run_pipeline(&cfg).unwrap();
        assert!(report.stages_run.is_empty());
        assert_eq!(report.stages_skipped.len(), 7);

        // Deleting one output reruns only that stage.
        fs::remove_file(cfg.out_dir.join("sweep.csv")).unwrap();
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.stages_run, vec!["sweep".to_string()]);
        assert_eq!(report.stages_skipped.len(), 6);
    }

    #[test]
    fn manifest_has_six_stages_without_generation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        // Pre-generate the data, then run with generation disabled.
        run_pipeline(&cfg).unwrap();
        cfg.data.generate = None;
        cfg.out_dir = dir.path().join("run2");
        run_pipeline(&cfg).unwrap();
        let manifest: RunManifest = serde_json::from_str(
            &fs::read_to_string(cfg.out_dir.join("run_manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.stages.len(), 6);
    }
}
