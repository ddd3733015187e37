//! The commands as library calls: generate, train, eval, bench, infer.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attnmesh_core::cost::{count_macs, Variant};
use attnmesh_core::eval::{evaluate_cascade, evaluate_predictions, evaluate_unified_pair};
use attnmesh_core::network::{forward_cascade, CascadeModel, CropInfo};
use attnmesh_core::synth::{Sample, SynthConfig};
use attnmesh_core::training::{train_blend, train_cascade, train_phase1, train_phase2, EpochRecord, TrainState};
use attnmesh_core::{AttentionMeshOutput, LandmarkSet, Model, Rng, Topology};
use serde::Serialize;

use crate::checkpoint::{load_cascade, load_model, save_cascade, save_model, ModelKind, Sidecar};
use crate::config::RunConfig;
use crate::dataset::{self, decode_sample, read_dataset, write_dataset, DatasetManifest, GeneratorInfo};
use crate::error::{Error, IoContext, Result};
use crate::report::{CostReport, ReportDoc};

pub const MODEL_FILE: &str = "model.amck";
pub const CASCADE_FILE: &str = "cascade.amck";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Seed offset separating the cascade's initialization from the unified model's.
const CASCADE_SEED_OFFSET: u64 = 0x00ca_5cade;

/// Worker cap from `ATTNMESH_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("ATTNMESH_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!("ATTNMESH_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub out: PathBuf,
    pub count: usize,
    pub synth: SynthConfig,
    pub seed: u64,
    pub topology: Topology,
    pub threads: usize,
}

pub fn run_generate(a: &GenerateArgs) -> Result<DatasetManifest> {
    if a.count == 0 {
        return Err(Error::Usage(String::from("count must be positive")));
    }
    if a.synth.image_size < 8 {
        return Err(Error::Usage(format!("image size {} is too small", a.synth.image_size)));
    }
    let samples = dataset::generate(a.seed, a.count, &a.synth, &a.topology, a.threads);
    write_dataset(&a.out, &samples, &a.topology, Some(GeneratorInfo { seed: a.seed, config: a.synth.clone() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub val: Option<PathBuf>,
    pub config: RunConfig,
    pub out: PathBuf,
    pub phase: Phase,
    /// Checkpoint to continue from (required for phase 2 alone).
    pub resume: Option<PathBuf>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub cascade_path: Option<PathBuf>,
    pub history: Vec<EpochRecord>,
    pub blend_losses: Vec<f64>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    model: &'a str,
    phase: u8,
    epoch: usize,
    train_loss: f64,
    val_nme_all: Option<f64>,
    val_nme_lips: Option<f64>,
    val_nme_eyes: Option<f64>,
    val_mesh_nme_all: Option<f64>,
    val_mesh_nme_lips: Option<f64>,
    val_mesh_nme_eyes: Option<f64>,
    wall_seconds: f64,
}

struct Logger {
    file: std::fs::File,
    path: PathBuf,
    start: Instant,
    verbose: bool,
    error: Option<Error>,
}

impl Logger {
    fn record(&mut self, model: &str, r: &EpochRecord) {
        let v = r.val;
        let line = LogLine {
            model,
            phase: r.phase,
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_nme_all: v.map(|v| v.unified.all),
            val_nme_lips: v.map(|v| v.unified.lips),
            val_nme_eyes: v.map(|v| v.unified.eyes),
            val_mesh_nme_all: v.map(|v| v.mesh.all),
            val_mesh_nme_lips: v.map(|v| v.mesh.lips),
            val_mesh_nme_eyes: v.map(|v| v.mesh.eyes),
            wall_seconds: self.start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string(&line).expect("log line serializes");
        if self.verbose {
            eprintln!("{text}");
        }
        if let Err(e) = writeln!(self.file, "{text}") {
            self.error.get_or_insert(Error::Io { path: self.path.clone(), source: e });
        }
    }

    fn check(&mut self) -> Result<()> {
        self.error.take().map_or(Ok(()), Err)
    }
}

fn load_split(path: &Path, expected: Option<&Topology>) -> Result<(Vec<Sample>, Topology)> {
    let d = read_dataset(path, expected)?;
    Ok((d.samples, d.topology))
}

pub fn run_train(a: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = &a.config;
    cfg.validate()?;
    let (train, topo) = load_split(&a.data, None)?;
    if train.is_empty() {
        return Err(Error::Usage(String::from("training set is empty")));
    }
    let val = match &a.val {
        Some(p) => load_split(p, Some(&topo))?.0,
        None => Vec::new(),
    };
    if train[0].image.shape()[1] != cfg.model.input_size {
        return Err(Error::Mismatch(format!(
            "dataset images are {}px, model input_size is {}",
            train[0].image.shape()[1],
            cfg.model.input_size
        )));
    }
    let (model, mut sidecar) = match (&a.resume, a.phase) {
        (Some(p), _) => {
            let (m, sc) = load_model(p, Some(&topo))?;
            if m.config != cfg.model {
                return Err(Error::Mismatch(String::from("resumed checkpoint's model config differs from the run config")));
            }
            (m, sc)
        }
        (None, Phase::Two) => {
            return Err(Error::Usage(String::from("phase 2 needs a phase-1 checkpoint (--resume)")));
        }
        (None, _) => {
            let m = Model::build(cfg.model.clone(), topo.clone(), &mut Rng::new(cfg.train.seed))?;
            (m, Sidecar::new(ModelKind::Unified, &cfg.model, &topo))
        }
    };
    if a.phase == Phase::Two && !sidecar.phases.contains(&1) {
        return Err(Error::Usage(String::from("phase 2 needs a checkpoint that completed phase 1")));
    }
    std::fs::create_dir_all(&a.out).at(&a.out)?;
    let log_path = a.out.join(TRAIN_LOG);
    let file = std::fs::File::create(&log_path).at(&log_path)?;
    let mut log = Logger { file, path: log_path, start: Instant::now(), verbose: a.verbose, error: None };
    let mut state = TrainState { model, history: std::mem::take(&mut sidecar.history) };
    if matches!(a.phase, Phase::One | Phase::Both) {
        state = train_phase1(state.model, &train, &val, &cfg.train, &mut |r| log.record("unified", r))
            .map(|s| TrainState { history: [state.history.clone(), s.history].concat(), ..s })?;
        log.check()?;
        sidecar.phases.push(1);
    }
    let mut blend_losses = Vec::new();
    let mut cascade_path = None;
    if matches!(a.phase, Phase::Two | Phase::Both) {
        state = train_phase2(state, &train, &val, &cfg.train, &mut |r| log.record("unified", r))?;
        log.check()?;
        sidecar.phases.push(2);
        if cfg.blend.epochs > 0 {
            blend_losses = train_blend(&mut state.model, &train, &cfg.blend)?;
            sidecar.blend_trained = true;
        }
        if cfg.cascade.enabled {
            let fresh = CascadeModel::build(
                cfg.model.clone(),
                topo.clone(),
                &mut Rng::new(cfg.train.seed.wrapping_add(CASCADE_SEED_OFFSET)),
            )?;
            let (casc, hist) = train_cascade(&state.model, fresh, &train, &val, &cfg.train, &mut |r| log.record("cascade", r))?;
            log.check()?;
            let mut sc = Sidecar::new(ModelKind::Cascade, &cfg.model, &topo);
            sc.phases = vec![1, 2];
            sc.train_config = Some(cfg.train.clone());
            sc.history = hist;
            let p = a.out.join(CASCADE_FILE);
            save_cascade(&p, &casc, &sc)?;
            cascade_path = Some(p);
        }
    }
    sidecar.train_config = Some(cfg.train.clone());
    sidecar.history = state.history.clone();
    let model_path = a.out.join(MODEL_FILE);
    save_model(&model_path, &state.model, &sidecar)?;
    Ok(TrainOutcome { model_path, cascade_path, history: state.history, blend_losses })
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub cascade: Option<PathBuf>,
    pub data: PathBuf,
    /// Score the ground truth against itself (pipeline check; needs no checkpoint).
    pub gt_as_prediction: bool,
}

pub fn run_eval(a: &EvalArgs) -> Result<ReportDoc> {
    let d = read_dataset(&a.data, None)?;
    let gts: Vec<LandmarkSet> = d.samples.iter().map(|s| s.landmarks.clone()).collect();
    let mut doc = ReportDoc::default();
    if a.gt_as_prediction {
        for v in Variant::ALL {
            doc.evals.push(evaluate_predictions(v, "ground-truth", &gts, &gts, &d.topology)?);
        }
        return Ok(doc);
    }
    let ck = a.checkpoint.as_ref().ok_or_else(|| Error::Usage(String::from("eval needs --checkpoint")))?;
    let (model, _) = load_model(ck, Some(&d.topology))?;
    let id = ck.display().to_string();
    let (mesh, unified) = evaluate_unified_pair(&model, &d.samples, &id)?;
    doc.evals.push(mesh);
    if let Some(cp) = &a.cascade {
        let (casc, _) = load_cascade(cp, Some(&d.topology))?;
        doc.evals.push(evaluate_cascade(&model, &casc, &d.samples, &cp.display().to_string())?);
    }
    doc.evals.push(unified);
    Ok(doc)
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub config: RunConfig,
    pub topology: Topology,
    pub config_name: String,
    /// Time inference on this many synthetic images (0 skips timing).
    pub images: usize,
    pub repetitions: usize,
    pub seed: u64,
}

pub fn run_bench(a: &BenchArgs) -> Result<ReportDoc> {
    let macs = count_macs(&a.config.model, &a.topology)?;
    macs.check_additivity()?;
    let mut timing = Vec::new();
    if a.images > 0 {
        let face = Model::build(a.config.model.clone(), a.topology.clone(), &mut Rng::new(a.seed))?;
        let casc = CascadeModel::build(a.config.model.clone(), a.topology.clone(), &mut Rng::new(a.seed))?;
        let synth = SynthConfig { image_size: a.config.model.input_size, ..SynthConfig::default() };
        let samples = dataset::generate(a.seed, a.images, &synth, &a.topology, 1);
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        timing = crate::bench::benchmark_wallclock(&Variant::ALL, &face, &casc, &images, a.repetitions)?;
    }
    Ok(ReportDoc { cost: Some(CostReport::new(&a.config_name, macs, timing)), ..ReportDoc::default() })
}

#[derive(Debug, Clone, Serialize)]
pub struct CropJson {
    pub region: &'static str,
    #[serde(flatten)]
    pub crop: CropInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferJson {
    pub variant: Variant,
    pub count: usize,
    /// Point id → [x, y, z] in image coordinates.
    pub points: std::collections::BTreeMap<usize, [f32; 3]>,
    pub crops: Vec<CropJson>,
    pub fallback: bool,
    pub blendshapes: Option<attnmesh_core::network::BlendCoefficients>,
}

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub cascade: Option<PathBuf>,
    pub image: PathBuf,
    pub overlay: Option<PathBuf>,
}

pub fn run_infer(a: &InferArgs) -> Result<(InferJson, AttentionMeshOutput)> {
    let bytes = std::fs::read(&a.image).at(&a.image)?;
    let sample = decode_sample(&bytes, &a.image)?;
    let (model, sidecar) = load_model(&a.checkpoint, None)?;
    if sample.landmarks.len() != model.topology.unified_count() {
        return Err(Error::Mismatch(format!(
            "sample carries {} landmarks, checkpoint topology `{}` has {}",
            sample.landmarks.len(),
            model.topology.name,
            model.topology.unified_count()
        )));
    }
    let (variant, out) = match &a.cascade {
        Some(cp) => {
            let (casc, _) = load_cascade(cp, Some(&model.topology))?;
            (Variant::Cascade, forward_cascade(&model, &casc, &sample.image)?)
        }
        None => (Variant::AttentionMesh, model.forward_unified(&sample.image)?),
    };
    if let Some(p) = &a.overlay {
        crate::overlay::write_overlay(p, &sample.image, &out.unified_mesh, &model.topology)?;
    }
    let blendshapes = if sidecar.blend_trained && variant == Variant::AttentionMesh { Some(model.blendshapes(&out)?) } else { None };
    let json = InferJson {
        variant,
        count: out.unified_mesh.len(),
        points: out.unified_mesh.points.iter().copied().enumerate().collect(),
        crops: model
            .topology
            .regions
            .iter()
            .zip(&out.crops)
            .map(|(s, c)| CropJson { region: s.name.as_str(), crop: *c })
            .collect(),
        fallback: out.any_fallback(),
        blendshapes,
    };
    Ok((json, out))
}
