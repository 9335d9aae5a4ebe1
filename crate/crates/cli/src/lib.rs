//! Command implementations behind the `bevclick` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use bevclick_core::eval::{label_difficulty, ApProtocol, Detection, EvalReport, GroundTruth, SceneEval};
use bevclick_core::kitti::{self, parse_labels, read_text, write_predictions, Dataset, LabelRecord};
use bevclick_core::synth::{write_dataset, SynthConfig};
use bevclick_core::{Cuboid, Execution};
use bevclick_detector::infer::{load_stage1, save_stage1, save_stage2};
use bevclick_detector::{infer_scene, train_stage1, train_stage2, Detector, DetectorConfig, LossLog, ObjectClass, Preset, TrainScene};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Parser)]
#[command(name = "bevclick", version, about = "Click-supervised lidar 3D detection")]
pub struct Cli {
    /// Key-value file (`key = value` per line) supplying defaults for any
    /// long flag; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic KITTI-style dataset with clicks.
    Synth(SynthArgs),
    /// Train the proposal network from clicks.
    TrainStage1(TrainArgs),
    /// Train the cuboid networks on stage-1 proposals and precise instances.
    TrainStage2(TrainStage2Args),
    /// Detect objects and write KITTI predictions with scores.
    Infer(InferArgs),
    /// Detect objects and write confident ones as KITTI labels.
    AnnotateAuto(AnnotateArgs),
    /// Print the Easy/Moderate/Hard × BEV/3D AP table.
    Eval(EvalArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    /// Standard deviation of click noise along x, in meters.
    #[arg(long)]
    pub click_sigma_x: Option<f64>,
    /// Standard deviation of click noise along z, in meters.
    #[arg(long)]
    pub click_sigma_z: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root with `velodyne/`, `calib/` and `label_2/`.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Directory of click files; defaults to `<scenes>/clicks`.
    #[arg(long)]
    pub clicks: Option<PathBuf>,
    /// Directory of precise instance labels. Without it a random fraction
    /// of `<scenes>/label_2` is used.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Fraction of labeled instances treated as precisely annotated.
    #[arg(long, default_value_t = 0.25)]
    pub precise_fraction: f64,
    #[arg(long, default_value = "car")]
    pub class: String,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the preset's iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for `stage1.ckpt` and `stage1_loss.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainStage2Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stage-1 checkpoint; defaults to `<out>/stage1.ckpt`.
    #[arg(long)]
    pub stage1: Option<PathBuf>,
    /// Output directory for `stage2.ckpt` and its loss logs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Directory holding `stage1.ckpt` and `stage2.ckpt`.
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory, one `<id>.txt` per scene.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub infer: InferArgs,
    /// Keep predictions at or above this confidence.
    #[arg(long, default_value_t = 0.5)]
    pub min_confidence: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of prediction files with scores.
    #[arg(long)]
    pub pred: PathBuf,
    /// Groundtruth label directory, or a dataset root holding `label_2/`.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "car")]
    pub class: String,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    /// Recall points of the AP integral: 11 or 40.
    #[arg(long, default_value_t = 40)]
    pub protocol: u32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Directory holding `stage1.ckpt` and `stage2.ckpt`; without it only
    /// rasters and record-only clicks are available.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where annotations are written; defaults to `<scenes>/annotations`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Synth(a) => synth(a, exec),
        Command::TrainStage1(a) => train1(a, exec),
        Command::TrainStage2(a) => train2(a, exec),
        Command::Infer(a) => infer(&a, None),
        Command::AnnotateAuto(a) => infer(&a.infer, Some(a.min_confidence)),
        Command::Eval(a) => eval(a, exec),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        scenes: a.scenes,
        ..SynthConfig::default()
    };
    if let Some(s) = a.click_sigma_x {
        cfg.click_sigma_x = s;
    }
    if let Some(s) = a.click_sigma_z {
        cfg.click_sigma_z = s;
    }
    write_dataset(&cfg, &a.out, exec)?;
    log::info!("wrote {} scenes to {}", cfg.scenes, a.out.display());
    Ok(())
}

fn detector_config(class: &str, m: &ModelArgs, exec: Execution, stage: u8) -> Result<DetectorConfig> {
    let preset: Preset = m.preset.parse()?;
    let class: ObjectClass = class.parse()?;
    let mut cfg = DetectorConfig::new(preset, class);
    cfg.train.seed = m.seed;
    cfg.train.exec = exec;
    cfg.train.augment = !m.no_augment;
    if let Some(n) = m.iterations {
        match stage {
            1 => cfg.train.stage1_iterations = n,
            _ => cfg.train.stage2_iterations = n,
        }
    }
    Ok(cfg)
}

/// Training scenes with clicks and precise instances of `class`.
fn load_training(d: &DataArgs, class: &str, seed: u64) -> Result<Vec<TrainScene>> {
    if !(0.0..=1.0).contains(&d.precise_fraction) {
        bail!("--precise-fraction must lie in [0, 1]");
    }
    let ds = Dataset::new(&d.scenes);
    let ids = ds.scene_ids()?;
    if ids.is_empty() {
        bail!("no scenes under {}", d.scenes.join("velodyne").display());
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in &ids {
        let scene = ds.load_scene(id)?;
        let click_file = d.clicks.as_ref().map_or_else(|| ds.clicks_path(id), |dir| dir.join(format!("{id}.txt")));
        let clicks = if click_file.exists() { kitti::read_clicks(&read_text(&click_file)?)? } else { Vec::new() };
        let instances = match &d.instances {
            Some(dir) => cuboids_of(&labels_in(&dir.join(format!("{id}.txt")))?, class)?,
            None => cuboids_of(&scene.labels, class)?,
        };
        out.push(TrainScene {
            id: id.clone(),
            clicks: clicks.into_iter().filter(|c| c.class.eq_ignore_ascii_case(class)).collect(),
            instances,
            cloud: scene.cloud,
        });
    }
    if d.instances.is_none() {
        keep_fraction(&mut out, d.precise_fraction, seed);
    }
    Ok(out)
}

/// Keep an exact random `fraction` of all instances across scenes.
fn keep_fraction(scenes: &mut [TrainScene], fraction: f64, seed: u64) {
    let mut all: Vec<(usize, usize)> = scenes.iter().enumerate().flat_map(|(s, sc)| (0..sc.instances.len()).map(move |k| (s, k))).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = (all.len() as f64 * fraction).round() as usize;
    let mut chosen = all[..take].to_vec();
    chosen.sort_unstable();
    let mut kept: Vec<Vec<Cuboid>> = vec![Vec::new(); scenes.len()];
    for (s, k) in chosen {
        kept[s].push(scenes[s].instances[k]);
    }
    for (s, k) in scenes.iter_mut().zip(kept) {
        s.instances = k;
    }
}

fn labels_in(path: &Path) -> Result<Vec<LabelRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(parse_labels(&read_text(path)?)?)
}

fn cuboids_of(labels: &[LabelRecord], class: &str) -> Result<Vec<Cuboid>> {
    Ok(labels.iter().filter(|r| r.class.eq_ignore_ascii_case(class)).map(LabelRecord::to_cuboid).collect::<Result<_, _>>()?)
}

/// Windowed loss averages, at least ten records for short runs.
fn write_log(path: &Path, log: &LossLog, log_every: usize) -> Result<()> {
    let every = log_every.min(log.rows.len() / 10).max(1);
    kitti::write_file(path, log.records(every).as_bytes())?;
    Ok(())
}

fn train1(a: TrainArgs, exec: Execution) -> Result<()> {
    let cfg = detector_config(&a.data.class, &a.model, exec, 1)?;
    let data = load_training(&a.data, cfg.profile.class.name(), a.model.seed)?;
    let (model, log) = train_stage1(&data, &cfg)?;
    save_stage1(&model, &cfg, &a.out.join("stage1.ckpt"))?;
    write_log(&a.out.join("stage1_loss.txt"), &log, cfg.train.log_every)?;
    log::info!("stage 1 trained on {} scenes; checkpoint in {}", data.len(), a.out.display());
    Ok(())
}

fn train2(a: TrainStage2Args, exec: Execution) -> Result<()> {
    let cfg = detector_config(&a.data.class, &a.model, exec, 2)?;
    let path = a.stage1.clone().unwrap_or_else(|| a.out.join("stage1.ckpt"));
    let (s1cfg, stage1) = load_stage1(&path).with_context(|| format!("loading {}", path.display()))?;
    if s1cfg.preset != cfg.preset || s1cfg.profile.class != cfg.profile.class {
        bail!("{} was trained with preset {} and class {}", path.display(), s1cfg.preset.name(), s1cfg.profile.class.name());
    }
    let data = load_training(&a.data, cfg.profile.class.name(), a.model.seed)?;
    let (models, logs) = train_stage2(&data, &stage1, &cfg)?;
    save_stage2(&models, &cfg, &a.out.join("stage2.ckpt"))?;
    write_log(&a.out.join("stage2_initial_loss.txt"), &logs.initial, cfg.train.log_every)?;
    write_log(&a.out.join("stage2_refine_loss.txt"), &logs.refine, cfg.train.log_every)?;
    log::info!("stage 2 trained on {} positives and {} background samples", logs.positives, logs.background);
    Ok(())
}

fn load_detector(model: &Path) -> Result<Detector> {
    Detector::load(&model.join("stage1.ckpt"), &model.join("stage2.ckpt")).with_context(|| format!("loading checkpoints from {}", model.display()))
}

fn infer(a: &InferArgs, min_confidence: Option<f64>) -> Result<()> {
    let det = load_detector(&a.model)?;
    let ds = Dataset::new(&a.scenes);
    let class = det.cfg.profile.class.name();
    let ids = ds.scene_ids()?;
    for id in &ids {
        let scene = ds.load_scene(id)?;
        let boxes = infer_scene(&det, &scene.cloud, a.seed)?;
        let text = match min_confidence {
            None => write_predictions(class, &boxes, &scene.calib),
            Some(t) => {
                let labels: Vec<LabelRecord> = boxes.iter().filter(|(_, c)| *c >= t).map(|(b, _)| LabelRecord::from_cuboid(class, b, None, &scene.calib)).collect();
                kitti::write_labels(&labels)
            }
        };
        kitti::write_file(&a.out.join(format!("{id}.txt")), text.as_bytes())?;
    }
    log::info!("wrote {} files to {}", ids.len(), a.out.display());
    Ok(())
}

/// Groundtruth files keyed by scene id.
fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let dir = if dir.join("label_2").is_dir() { dir.join("label_2") } else { dir.to_path_buf() };
    let mut out = BTreeMap::new();
    for e in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            if let Some(stem) = p.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), p);
            }
        }
    }
    Ok(out)
}

/// Evaluate prediction files against groundtruth label files.
pub fn evaluate_dirs(pred: &Path, gt: &Path, class: &str, iou: f64, protocol: ApProtocol, exec: Execution) -> Result<EvalReport> {
    let gts = label_files(gt)?;
    if gts.is_empty() {
        bail!("no groundtruth files under {}", gt.display());
    }
    let mut scenes = Vec::with_capacity(gts.len());
    for (id, path) in &gts {
        let labels = labels_in(path)?;
        let mut groundtruth = Vec::new();
        let mut dont_care = Vec::new();
        for r in &labels {
            if r.is_dont_care() {
                dont_care.push(r.bbox);
            } else if r.class.eq_ignore_ascii_case(class) {
                groundtruth.push(GroundTruth {
                    cuboid: r.to_cuboid()?,
                    regimes: label_difficulty(r),
                });
            }
        }
        let mut detections = Vec::new();
        for r in labels_in(&pred.join(format!("{id}.txt")))? {
            if r.class.eq_ignore_ascii_case(class) {
                let Some(score) = r.score else { bail!("{}: prediction without a score", pred.join(format!("{id}.txt")).display()) };
                let mut d = Detection::new(r.to_cuboid()?, score, id.clone());
                d.bbox = Some(r.bbox);
                detections.push(d);
            }
        }
        scenes.push(SceneEval {
            detections,
            groundtruth,
            dont_care,
        });
    }
    let class_name = class.parse::<ObjectClass>().map_or(class, |c| c.name());
    Ok(EvalReport::compute(class_name, &scenes, iou, protocol, exec))
}

fn eval(a: EvalArgs, exec: Execution) -> Result<()> {
    let protocol = match a.protocol {
        11 => ApProtocol::Eleven,
        40 => ApProtocol::Forty,
        n => bail!("--protocol must be 11 or 40, got {n}"),
    };
    if !(0.0..=1.0).contains(&a.iou) {
        bail!("--iou must lie in [0, 1]");
    }
    print!("{}", evaluate_dirs(&a.pred, &a.gt, &a.class, a.iou, protocol, exec)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let detector = a.model.as_deref().map(load_detector).transpose()?;
    let ds = Dataset::new(&a.scenes);
    let out = a.out.unwrap_or_else(|| a.scenes.join("annotations"));
    let state = Arc::new(bevclick_service::AppState::new(ds, out, detector));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        log::info!("serving on http://{}", listener.local_addr()?);
        bevclick_service::serve(listener, state).await?;
        Ok(())
    })
}
