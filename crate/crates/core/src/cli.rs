//! Command-line front end.
//!
//! Every command reads an optional TOML run config; flags override file
//! values. Exit codes: 0 success, 1 verification failure, 2 usage or
//! configuration error, 3 numeric abort.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::blocks::{gradient_suite, GRAD_TOLERANCE};
use crate::data::{load_regions, write_dataset, Dataset, Split, SynthConfig};
use crate::detector::{build_model, ModelConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Criterion, EvalReport, MatchConfig};
use crate::geometry::Detection;
use crate::inference::{detections_csv, load_detections_csv, predict_region, InferenceConfig};
use crate::tensor::Checkpoint;
use crate::train::{model_from_checkpoint, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Caps the worker count; results do not depend on it.
pub const THREADS_ENV: &str = "SDF_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Merged configuration for every command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the synth and train seeds when set.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub matching: MatchConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn from_flag(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn apply_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            self.synth.seed = s;
            self.train.seed = s;
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "sdf-yolo", version, about = "Single-scale mitotic figure detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset (manifest.json + images/).
    Synth(SynthArgs),
    /// Train and keep the best checkpoint by validation AP@0.5.
    Train(TrainArgs),
    /// Run tiled inference over a split and write detections CSV.
    Infer(InferArgs),
    /// Score detections against a split.
    Eval(EvalArgs),
    /// Finite-difference check of every block kind.
    Gradcheck(GradcheckArgs),
    /// Pretty-print a report JSON.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// TOML run config; flags win over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub region_size: Option<usize>,
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub empty: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    /// Quarter-width model.
    #[arg(long)]
    pub toy: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Detections CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub min_size: Option<f64>,
    #[arg(long)]
    pub no_tta: bool,
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory for report.json and froc.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    #[arg(long)]
    pub distance: Option<f64>,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum CriterionArg {
    Center,
    Iou,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: perturb every backward rule.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub report: PathBuf,
}

pub const REPORT_FILE: &str = "report.json";
pub const FROC_FILE: &str = "froc.csv";

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing {what} (flag or [paths] entry)")))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let mut cfg = RunConfig::from_flag(a.common.config.as_deref())?;
    cfg.apply_seed(a.common.seed);
    let s = &mut cfg.synth;
    set(&mut s.n_regions, a.regions);
    set(&mut s.region_size, a.region_size);
    set(&mut s.blobs_per_region, a.blobs);
    set(&mut s.empty_regions, a.empty);
    set(&mut s.distractors_per_region, a.distractors);
    if let Some(p) = &a.out {
        cfg.paths.out = Some(p.clone());
    }
    let out = required(&cfg.paths.out, "--out")?;
    let recs = write_dataset(&cfg.synth, out)?;
    println!("wrote {} regions to {}", recs.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = RunConfig::from_flag(a.common.config.as_deref())?;
    cfg.apply_seed(a.common.seed);
    if a.toy {
        cfg.model = ModelConfig::toy();
    }
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.steps_per_epoch, a.steps_per_epoch);
    set(&mut t.lr, a.lr);
    if a.no_augment {
        t.augment = false;
    }
    if let Some(p) = &a.data {
        cfg.paths.data = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.paths.out = Some(p.clone());
    }
    cfg.train.validate()?;
    let data = required(&cfg.paths.data, "--data")?;
    let out = required(&cfg.paths.out, "--out")?;
    let ds = Dataset::open(data)?;

    let mut model = build_model(&cfg.model, cfg.train.seed)?;
    println!("model: {} parameters, seed {}", model.param_count(), cfg.train.seed);
    let outcome = train(&mut model, &ds, &cfg.train, Some(out), |e| {
        println!("epoch {:>3}  box {:.4}  obj {:.4}  total {:.4}  val AP@0.5 {:.4}", e.epoch, e.box_loss, e.obj_loss, e.total, e.val_ap50);
    })?;
    match outcome.best.1 {
        Some(ap) => println!("best val AP@0.5 {ap:.4} at epoch {}", outcome.best.0),
        None => println!("no epochs run; initial weights saved"),
    }
    Ok(EXIT_OK)
}

fn cmd_infer(a: &InferArgs) -> Result<i32> {
    let mut cfg = RunConfig::from_flag(a.common.config.as_deref())?;
    let inf = &mut cfg.inference;
    set(&mut inf.conf_threshold, a.conf);
    set(&mut inf.nms_iou, a.nms_iou);
    set(&mut inf.min_size, a.min_size);
    set(&mut inf.tile, a.tile);
    set(&mut inf.overlap, a.overlap);
    if a.no_tta {
        inf.tta_flip = false;
    }
    inf.validate()?;
    if let Some(p) = &a.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(p) = &a.data {
        cfg.paths.data = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.paths.out = Some(p.clone());
    }
    let split = Split::parse(&a.split)?;
    let ck = Checkpoint::load(required(&cfg.paths.checkpoint, "--checkpoint")?)?;
    let model = model_from_checkpoint(&ck)?;
    let ds = Dataset::open(required(&cfg.paths.data, "--data")?)?;
    let out = required(&cfg.paths.out, "--out")?;

    println!("infer {}", cfg.inference.header());
    let regions = load_regions(&ds, split)?;
    let mut rows: Vec<(String, Detection)> = Vec::new();
    let mut passes = 0;
    for (rec, img) in &regions {
        let p = predict_region(&model, img, &cfg.inference)?;
        passes += p.forward_passes;
        rows.extend(p.detections.into_iter().map(|d| (rec.region_id(), d)));
    }
    write_file(out, detections_csv(&rows)?.as_bytes())?;
    println!("regions {}  forward passes {passes}  detections {}", regions.len(), rows.len());
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let mut cfg = RunConfig::from_flag(a.common.config.as_deref())?;
    let m = &mut cfg.matching;
    if let Some(c) = a.criterion {
        m.criterion = match c {
            CriterionArg::Center => Criterion::CenterDistance,
            CriterionArg::Iou => Criterion::Iou,
        };
    }
    set(&mut m.distance_threshold, a.distance);
    set(&mut m.iou_threshold, a.iou);
    m.validate()?;
    if let Some(p) = &a.data {
        cfg.paths.data = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.paths.out = Some(p.clone());
    }
    let split = Split::parse(&a.split)?;
    let ds = Dataset::open(required(&cfg.paths.data, "--data")?)?;
    let records = ds.split(split);

    let index: HashMap<String, usize> = records.iter().enumerate().map(|(k, r)| (r.region_id(), k)).collect();
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); records.len()];
    for (id, d) in load_detections_csv(&a.detections)? {
        let k = index.get(&id).ok_or_else(|| Error::Data(format!("unknown region id `{id}` for the {split} split")))?;
        dets[*k].push(d);
    }
    let gts: Vec<_> = records.iter().map(|r| r.boxes()).collect();
    let domains: Vec<_> = records.iter().map(|r| r.domain.clone()).collect();
    let report = evaluate(&dets, &gts, &domains, &cfg.matching)?;
    print!("{}", report.render());
    if let Some(out) = &cfg.paths.out {
        write_file(&out.join(REPORT_FILE), report.to_json()?.as_bytes())?;
        write_file(&out.join(FROC_FILE), report.froc_csv().as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let entries = gradient_suite(a.seed, a.corrupt_backward)?;
    println!("{:<12} {:<16} {:>12}  {:<24} status", "block", "input", "max rel err", "worst tensor");
    let mut failed = Vec::new();
    for e in &entries {
        let status = if e.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<12} {:<16} {:>12.3e}  {:<24} {status}",
            e.kind.name(),
            format!("{:?}", e.input_shape),
            e.report.max_rel_error,
            e.report.worst
        );
        if !e.passed() {
            failed.push(e.kind.name());
        }
    }
    if failed.is_empty() {
        return Ok(EXIT_OK);
    }
    eprintln!("gradient check failed (> {GRAD_TOLERANCE:e}): {}", failed.join(", "));
    Ok(EXIT_VERIFY)
}

fn cmd_report(a: &ReportArgs) -> Result<i32> {
    print!("{}", EvalReport::load(&a.report)?.render());
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main_exit_code() -> i32 {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => crate::par::init_thread_pool(n),
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got `{v}`");
                return EXIT_CONFIG;
            }
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
