//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use attnmesh_core::synth::SynthConfig;
use attnmesh_core::ModelConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{IoContext, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{self, BenchArgs, EvalArgs, GenerateArgs, InferArgs, Phase, TrainArgs};
use crate::report::ReportDoc;
use crate::topo::resolve_topology;

#[derive(Debug, Parser)]
#[command(name = "attnmesh", version, about = "Attention mesh face landmarks: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic face dataset.
    Generate(GenerateCmd),
    /// Train the unified model (and optionally the cascade baseline).
    Train(TrainCmd),
    /// Score checkpoints on a dataset.
    Eval(EvalCmd),
    /// MAC counts and host timing for mesh-only, cascade and attention mesh.
    Bench(BenchCmd),
    /// Landmarks for one sample blob.
    Infer(InferCmd),
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `desk`, `full` or a topology JSON file.
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset (metrics per epoch).
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub phase: PhaseArg,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_phase1: Option<usize>,
    #[arg(long)]
    pub epochs_phase2: Option<usize>,
    #[arg(long)]
    pub blend_epochs: Option<usize>,
    /// Also train the cascaded baseline.
    #[arg(long)]
    pub cascade: bool,
    /// Echo the epoch log to stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    /// Score the ground truth as its own prediction (pipeline check).
    #[arg(long)]
    pub gt_as_prediction: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Report file (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// Run config whose `[model]` section is measured.
    #[arg(long, conflicts_with = "scale")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub topology: Option<String>,
    /// Images to time (0 reports MACs only).
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Use this cascade checkpoint instead of the unified regions.
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    /// A sample blob (`.amds`).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write a PNG with the predicted contours drawn on the input.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = pipeline::threads_from_env()?;
    match cli.command {
        Command::Generate(c) => generate(c, threads),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Bench(c) => bench(c),
        Command::Infer(c) => infer(c),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Manifest location for a single-file output.
fn file_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn finish_file_manifest(m: RunManifest, out: &Path) -> Result<()> {
    let path = file_manifest_path(out);
    let mut m = m;
    m.finished_unix = crate::manifest::now_unix();
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).at(&path)
}

fn generate(c: GenerateCmd, threads: usize) -> Result<()> {
    let topology = resolve_topology(c.topology.as_deref())?;
    let mut synth = SynthConfig { image_size: c.size, ..SynthConfig::default() };
    if let Some(n) = c.noise {
        synth.noise_std = n;
    }
    let a = GenerateArgs { out: c.out.clone(), count: c.count, synth, seed: c.seed, topology, threads };
    let mut m = RunManifest::start(
        "generate",
        json!({ "count": a.count, "synth": a.synth, "topology": a.topology.name }),
        Some(a.seed),
    );
    let manifest = pipeline::run_generate(&a)?;
    m.outputs = std::iter::once(String::from(crate::dataset::MANIFEST))
        .chain(manifest.files.iter().map(|f| f.name.clone()))
        .collect();
    m.finish(&a.out)?;
    eprintln!("wrote {} samples to {}", manifest.count, a.out.display());
    Ok(())
}

fn train(c: TrainCmd) -> Result<()> {
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        config.train.seed = s;
    }
    if let Some(e) = c.epochs_phase1 {
        config.train.epochs_phase1 = e;
    }
    if let Some(e) = c.epochs_phase2 {
        config.train.epochs_phase2 = e;
    }
    if let Some(e) = c.blend_epochs {
        config.blend.epochs = e;
    }
    if c.cascade {
        config.cascade.enabled = true;
    }
    config.validate()?;
    let phase = match c.phase {
        PhaseArg::One => Phase::One,
        PhaseArg::Two => Phase::Two,
        PhaseArg::Both => Phase::Both,
    };
    let mut m = RunManifest::start(
        "train",
        json!({ "phase": format!("{:?}", c.phase).to_lowercase(), "resume": c.resume.as_deref().map(path_str), "run": config }),
        Some(config.train.seed),
    );
    m.inputs = std::iter::once(path_str(&c.data)).chain(c.val.as_deref().map(path_str)).collect();
    let a = TrainArgs {
        data: c.data,
        val: c.val,
        config,
        out: c.out.clone(),
        phase,
        resume: c.resume,
        verbose: c.verbose,
    };
    let outcome = pipeline::run_train(&a)?;
    m.outputs = vec![path_str(&outcome.model_path), String::from(pipeline::TRAIN_LOG)];
    m.outputs.extend(outcome.cascade_path.as_deref().map(path_str));
    m.finish(&c.out)?;
    eprintln!("wrote {}", outcome.model_path.display());
    Ok(())
}

fn emit(doc: &ReportDoc, format: Format, out: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Json => doc.to_json(),
        Format::Markdown => doc.to_markdown(),
    };
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).at(dir)?;
            }
            std::fs::write(p, text).at(p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(c: EvalCmd) -> Result<()> {
    let a = EvalArgs {
        checkpoint: c.checkpoint,
        cascade: c.cascade,
        data: c.data,
        gt_as_prediction: c.gt_as_prediction,
    };
    let mut m = RunManifest::start(
        "eval",
        json!({ "gt_as_prediction": a.gt_as_prediction, "format": format!("{:?}", c.format).to_lowercase() }),
        None,
    );
    m.inputs = [Some(&a.data), a.checkpoint.as_ref(), a.cascade.as_ref()].into_iter().flatten().map(|p| path_str(p)).collect();
    let doc = pipeline::run_eval(&a)?;
    emit(&doc, c.format, c.out.as_deref())?;
    if let Some(out) = &c.out {
        m.outputs = vec![path_str(out)];
        finish_file_manifest(m, out)?;
    }
    Ok(())
}

fn bench(c: BenchCmd) -> Result<()> {
    let (config, name) = match (&c.config, c.scale) {
        (Some(p), _) => (RunConfig::load(p)?, path_str(p)),
        (None, Some(Scale::Full)) => (RunConfig { model: ModelConfig::full(), ..RunConfig::default() }, String::from("full")),
        (None, _) => (RunConfig::default(), String::from("desk")),
    };
    let topo_spec = c.topology.as_deref().or(match c.scale {
        Some(Scale::Full) => Some("full"),
        _ => None,
    });
    let topology = resolve_topology(topo_spec)?;
    let a = BenchArgs {
        config,
        topology,
        config_name: name,
        images: c.images,
        repetitions: c.repetitions,
        seed: c.seed,
    };
    let mut m = RunManifest::start(
        "bench",
        json!({ "model": a.config.model, "topology": a.topology.name, "images": a.images, "repetitions": a.repetitions }),
        Some(a.seed),
    );
    let doc = pipeline::run_bench(&a)?;
    emit(&doc, c.format, c.out.as_deref())?;
    if let Some(out) = &c.out {
        m.outputs = vec![path_str(out)];
        finish_file_manifest(m, out)?;
    }
    Ok(())
}

fn infer(c: InferCmd) -> Result<()> {
    let a = InferArgs { checkpoint: c.checkpoint, cascade: c.cascade, image: c.image, overlay: c.overlay };
    let mut m = RunManifest::start("infer", json!({ "overlay": a.overlay.is_some(), "cascade": a.cascade.is_some() }), None);
    m.inputs = [Some(&a.checkpoint), a.cascade.as_ref(), Some(&a.image)].into_iter().flatten().map(|p| path_str(p)).collect();
    let (json, _) = pipeline::run_infer(&a)?;
    let mut text = serde_json::to_string_pretty(&json).expect("landmarks serialize");
    text.push('\n');
    if let Some(dir) = c.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(&c.out, text).at(&c.out)?;
    m.outputs = std::iter::once(path_str(&c.out)).chain(a.overlay.as_deref().map(path_str)).collect();
    finish_file_manifest(m, &c.out)
}
