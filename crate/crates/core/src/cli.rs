//! The `cmas` command line: synth, fit-prior, lift, eval, ablate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffusion::{cosine_schedule, Denoiser};
use crate::eval::{
    component_grid, make_dataset, mpjpe_with_root, reports_csv, run_ablation, view_grid, weight_grid,
    AblationCell, Alignment, Benchmark, MotionParams, DEFAULT_VIEW_GRID, DEFAULT_WEIGHT_GRID,
};
use crate::io::{pose2d_from_jsonl, pose3d_to_jsonl, read_dataset, read_pose3d, write_dataset, PriorModel};
use crate::preprocess::{parse_alphapose, preprocess, JointMapping, PreprocessOptions};
use crate::prior::{fit_gaussian_prior, fit_regression_denoiser};
use crate::sampler::{diagnostics_jsonl, lift_with_rig, CmasConfig, OracleDenoiser, StepDiagnostics};
use crate::skeleton::{Pose2DSequence, Pose3DSequence};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "cmas", version, about = "Lift 2D pose sequences to 3D with conditional multi-view ancestral sampling")]
pub struct Cli {
    /// JSON file with lift settings; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random draw [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write per-step diagnostics as JSON lines to this path
    #[arg(long, global = true)]
    pub diag: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic motions and their projections through the rig
    Synth(SynthArgs),
    /// Fit a denoiser to the projections of a synthetic dataset
    FitPrior(FitPriorArgs),
    /// Lift a 2D sequence seen from the reference view to 3D
    Lift(LiftArgs),
    /// MPJPE between two 3D motion files
    Eval(EvalArgs),
    /// Run the view-count, loss-component and weight sweeps
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of motions
    #[arg(long, short = 'n', default_value_t = 200)]
    pub n: usize,
    /// Frames per motion
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    /// Rig views [default: 7]
    #[arg(long)]
    pub views: Option<usize>,
    /// Peak joint-angle excursion in radians
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorKind {
    Gaussian,
    Regression,
}

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    /// Dataset directory written by `synth`
    #[arg(long)]
    pub dataset: PathBuf,
    /// Denoiser family
    #[arg(long, value_enum, default_value_t = PriorKind::Gaussian)]
    pub kind: PriorKind,
    /// Diffusion steps T [default: 100]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Forward-noised draws per step for the regression fit
    #[arg(long, default_value_t = 2000)]
    pub samples_per_t: usize,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LiftFlags {
    /// Number of rig views V [default: 7]
    #[arg(long)]
    pub views: Option<usize>,
    /// Diffusion steps T [default: 100]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Reference-view weight w_ref [default: 0.8]
    #[arg(long = "w-ref")]
    pub w_ref: Option<f64>,
    /// Bone-variance weight [default: 0.001]
    #[arg(long = "lambda-bone")]
    pub lambda_bone: Option<f64>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam iterations per denoising step [default: 1000]
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// 2D input: AlphaPose-style JSON, or pose JSONL with --raw
    #[arg(long)]
    pub input: PathBuf,
    /// Model file written by `fit-prior`
    #[arg(long, required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    /// Use the projections of this 3D motion file as the denoiser
    #[arg(long, conflicts_with = "model")]
    pub oracle: Option<PathBuf>,
    /// Input is already a normalized pose JSONL; skip preprocessing
    #[arg(long)]
    pub raw: bool,
    /// Source-to-skeleton joint mapping for AlphaPose input [default: COCO-17]
    #[arg(long)]
    pub joint_map: Option<PathBuf>,
    /// Ground-truth 3D motion to score the output against
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Alignment for the printed MPJPE
    #[arg(long, value_enum, default_value_t = AlignmentArg::Root)]
    pub alignment: AlignmentArg,
    /// Output 3D pose JSONL
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: LiftFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignmentArg {
    None,
    Root,
    Procrustes,
}

impl From<AlignmentArg> for Alignment {
    fn from(a: AlignmentArg) -> Self {
        match a {
            AlignmentArg::None => Alignment::None,
            AlignmentArg::Root => Alignment::Root,
            AlignmentArg::Procrustes => Alignment::Procrustes,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Alignment applied before measuring
    #[arg(long, value_enum, default_value_t = AlignmentArg::Root)]
    pub alignment: AlignmentArg,
    /// Also write `alignment,mpjpe_mm` rows for every alignment
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// View counts to sweep [default: 3,5,7,9]
    #[arg(long, value_delimiter = ',')]
    pub views_grid: Option<Vec<String>>,
    /// Reference weights to sweep [default: 1/7,1/4,1/3,2/5,1/2,2/3,3/4,4/5,9/10,1]
    #[arg(long, value_delimiter = ',')]
    pub weight_grid: Option<Vec<String>>,
    /// Skip the loss-component sweep
    #[arg(long)]
    pub no_components: bool,
    /// Use only the first N dataset motions
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Std of Gaussian noise added to the reference-view input
    #[arg(long, default_value_t = 0.005)]
    pub input_noise: f64,
    /// Output CSV, one row per grid cell
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full reports as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub flags: LiftFlags,
}

/// Parses arguments, runs the command and maps errors to exit codes
/// (2 for usage and configuration errors, 1 otherwise).
pub fn main() -> ExitCode {
    finish(run(Cli::parse()))
}

/// Runs one subcommand with the given arguments (program name excluded),
/// e.g. `run_subcommand("eval", std::env::args().skip(1))`.
pub fn run_subcommand(name: &str, args: impl IntoIterator<Item = String>) -> ExitCode {
    let argv = ["cmas".to_string(), name.to_string()].into_iter().chain(args);
    finish(run(Cli::parse_from(argv)))
}

fn finish(result: Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => CmasConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &mut config),
        Command::FitPrior(a) => cmd_fit_prior(&a, &mut config),
        Command::Lift(a) => cmd_lift(&a, &mut config, cli.diag.as_deref()),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a, &mut config),
    }
}

pub fn load_config(path: &Path) -> Result<CmasConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}

fn apply_flags(config: &mut CmasConfig, f: &LiftFlags) -> Result<()> {
    if let Some(v) = f.views {
        config.views = v;
    }
    if let Some(v) = f.steps {
        config.steps = v;
    }
    if let Some(v) = f.w_ref {
        config.w_ref = v;
    }
    if let Some(v) = f.lambda_bone {
        config.lambda_bone = v;
    }
    if let Some(v) = f.lr {
        config.optimizer.learning_rate = v;
    }
    if let Some(v) = f.iters {
        config.optimizer.iterations = v;
    }
    config.validate()
}

pub fn cmd_synth(a: &SynthArgs, config: &mut CmasConfig) -> Result<()> {
    if let Some(v) = a.views {
        config.views = v;
    }
    config.validate()?;
    if a.n == 0 || a.length == 0 {
        return Err(Error::Config("--n and --length must be positive".into()));
    }
    let rig = config.make_rig()?;
    let params = MotionParams {
        amplitude: a.amplitude,
        ..MotionParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data = make_dataset(a.n, &config.topology, &rig, a.length, &mut rng, &params)?;
    let paths = write_dataset(&a.out, &data, &config.topology, &rig)?;
    println!("wrote {} motions ({} files) to {}", a.n, paths.len(), a.out.display());
    Ok(())
}

pub fn cmd_fit_prior(a: &FitPriorArgs, config: &mut CmasConfig) -> Result<()> {
    let steps = a.steps.unwrap_or(config.steps);
    let loaded = read_dataset(&a.dataset)?;
    let pooled = loaded.data.pooled_projections();
    let model = match a.kind {
        PriorKind::Gaussian => {
            let prior = fit_gaussian_prior(&pooled).map_err(to_config)?;
            println!("gaussian prior over {} sequences, dimension {}", pooled.len(), prior.dim());
            PriorModel::Gaussian { prior, steps }
        }
        PriorKind::Regression => {
            let schedule = cosine_schedule(steps)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let fit = fit_regression_denoiser(&pooled, &schedule, a.samples_per_t, &mut rng).map_err(to_config)?;
            println!("t,train_mse");
            for (t, mse) in fit.train_mse.iter().enumerate() {
                println!("{},{mse:.6e}", t + 1);
            }
            PriorModel::Regression(fit.model)
        }
    };
    model.save(&a.out)?;
    println!("wrote {} model to {}", model.kind(), a.out.display());
    Ok(())
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Config(format!("inconsistent dataset: {m}")),
        other => other,
    }
}

fn load_input(a: &LiftArgs, config: &CmasConfig, rig: &crate::CameraRig) -> Result<Vec<Pose2DSequence>> {
    if !a.input.is_file() {
        return Err(Error::Config(format!("input {} not found", a.input.display())));
    }
    let text = std::fs::read_to_string(&a.input)?;
    if a.raw {
        return Ok(vec![pose2d_from_jsonl(&text)?]);
    }
    let mapping = match &a.joint_map {
        Some(p) => JointMapping::load(p)?,
        None => JointMapping::coco17_to_human13(),
    };
    let track = parse_alphapose(&text, &mapping)?;
    let mut options = PreprocessOptions::default();
    options.normalize.root = config.topology.root();
    options.normalize.distance = config.rig.distance;
    let (segments, norm) = preprocess(&track, rig.reference(), &options)?;
    info!("normalized with scale {:.4e}, {} segment(s)", norm.scale, segments.len());
    segments.iter().map(|s| s.to_sequence()).collect()
}

/// Splits a sequence into windows of exactly `len` frames; the last window is
/// shifted back to end at the final frame.
fn windows(seq: &Pose2DSequence, len: usize) -> Result<Vec<(usize, Pose2DSequence)>> {
    let (l, j) = (seq.frames(), seq.joints());
    let mut starts: Vec<usize> = (0..l / len).map(|k| k * len).collect();
    if l % len != 0 {
        starts.push(l - len);
    }
    starts
        .into_iter()
        .map(|s| {
            let range = s * j..(s + len) * j;
            let mut w = Pose2DSequence::new(len, j, seq.data()[range.clone()].to_vec())?;
            if let Some(m) = seq.mask() {
                w = w.with_mask(m[range].to_vec())?;
            }
            Ok((s, w))
        })
        .collect()
}

fn lift_windowed(
    seq: &Pose2DSequence,
    denoiser: &dyn Denoiser,
    config: &CmasConfig,
    rig: &crate::CameraRig,
) -> Result<(Pose3DSequence, Vec<StepDiagnostics>)> {
    let len = denoiser.shape().map_or(seq.frames(), |s| s.0);
    let mut data = vec![None; seq.frames() * seq.joints()];
    let mut diagnostics = Vec::new();
    for (start, w) in windows(seq, len)? {
        let out = lift_with_rig(&w, denoiser, config, rig)?;
        for (k, p) in out.motion.data().iter().enumerate() {
            let slot = &mut data[start * seq.joints() + k];
            if slot.is_none() {
                *slot = Some(*p);
            }
        }
        diagnostics.extend(out.diagnostics);
    }
    let data = data.into_iter().map(|p| p.expect("windows cover every frame")).collect();
    Ok((Pose3DSequence::new(seq.frames(), seq.joints(), data)?, diagnostics))
}

pub fn cmd_lift(a: &LiftArgs, config: &mut CmasConfig, diag: Option<&Path>) -> Result<()> {
    apply_flags(config, &a.flags)?;
    let rig = config.make_rig()?;
    let inputs = load_input(a, config, &rig)?;
    let denoiser: Box<dyn Denoiser> = match (&a.model, &a.oracle) {
        (_, Some(gt)) => Box::new(OracleDenoiser::new(&read_pose3d(gt)?, &rig)?),
        (Some(m), None) => {
            let model = PriorModel::load(m)?;
            if model.steps() != config.steps {
                return Err(Error::Config(format!(
                    "model was fitted with T={} but --steps is {}",
                    model.steps(),
                    config.steps
                )));
            }
            model.denoiser()?
        }
        (None, None) => return Err(Error::Config("either --model or --oracle is required".into())),
    };
    let shape = denoiser.shape();
    let mut outputs = Vec::new();
    let mut diagnostics = Vec::new();
    for (k, seq) in inputs.iter().enumerate() {
        if let Some((l, j)) = shape {
            if j != seq.joints() || (a.raw && l != seq.frames()) {
                return Err(Error::Config(format!(
                    "input is {}x{} but the denoiser expects {l}x{j}",
                    seq.frames(),
                    seq.joints()
                )));
            }
            if seq.frames() < l {
                warn!("segment {k} has {} frames, fewer than the model's {l}; skipped", seq.frames());
                continue;
            }
        }
        let (motion, diag) = lift_windowed(seq, denoiser.as_ref(), config, &rig)?;
        outputs.push(motion);
        diagnostics.extend(diag);
    }
    if outputs.is_empty() {
        return Err(Error::Config("no input segment is long enough to lift".into()));
    }
    for (k, motion) in outputs.iter().enumerate() {
        let path = if outputs.len() == 1 {
            a.out.clone()
        } else {
            segment_path(&a.out, k)
        };
        std::fs::write(&path, pose3d_to_jsonl(motion))?;
        println!("wrote {}", path.display());
    }
    if let Some(p) = diag {
        std::fs::write(p, diagnostics_jsonl(&diagnostics))?;
    }
    if let Some(gt) = &a.gt {
        let gt = read_pose3d(gt)?;
        let err = mpjpe_with_root(&outputs[0], &gt, a.alignment.into(), config.topology.root())?;
        println!("mpjpe_{} {err:.4} mm", Alignment::from(a.alignment));
    }
    Ok(())
}

fn segment_path(out: &Path, k: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("lift");
    out.with_file_name(format!("{stem}.seg{k}.jsonl"))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    for p in [&a.pred, &a.gt] {
        if !p.is_file() {
            return Err(Error::Config(format!("{} not found", p.display())));
        }
    }
    let pred = read_pose3d(&a.pred)?;
    let gt = read_pose3d(&a.gt)?;
    let alignment: Alignment = a.alignment.into();
    println!("mpjpe_{alignment} {:.4} mm", mpjpe_with_root(&pred, &gt, alignment, 0)?);
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["alignment", "mpjpe_mm"]).map_err(|e| Error::Format(e.to_string()))?;
        for al in [Alignment::None, Alignment::Root, Alignment::Procrustes] {
            let v = mpjpe_with_root(&pred, &gt, al, 0)?;
            w.write_record([al.to_string(), format!("{v:.6}")])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn parse_grid<T: std::str::FromStr>(name: &str, raw: &[String], parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let values: Vec<T> = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| Error::Config(format!("--{name}: cannot parse '{s}'"))))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config(format!("--{name} is empty")));
    }
    Ok(values)
}

/// `"4/5"`, `"0.8"` or `"1"`.
fn parse_fraction(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((n, d)) => Some(n.trim().parse::<f64>().ok()? / d.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

pub fn cmd_ablate(a: &AblateArgs, config: &mut CmasConfig) -> Result<()> {
    apply_flags(config, &a.flags)?;
    let views = match &a.views_grid {
        Some(raw) => parse_grid("views-grid", raw, |s| s.parse::<usize>().ok())?,
        None => DEFAULT_VIEW_GRID.to_vec(),
    };
    let weights = match &a.weight_grid {
        Some(raw) => parse_grid("weight-grid", raw, parse_fraction)?,
        None => DEFAULT_WEIGHT_GRID.to_vec(),
    };
    let mut grid: Vec<AblationCell> = view_grid(&views, config.w_ref, config.lambda_bone);
    if !a.no_components {
        grid.extend(component_grid(config.views, config.w_ref, config.lambda_bone));
    }
    grid.extend(weight_grid(config.views, &weights, config.lambda_bone));

    let loaded = read_dataset(&a.dataset)?;
    let model = PriorModel::load(&a.model)?;
    if model.steps() != config.steps {
        return Err(Error::Config(format!(
            "model was fitted with T={} but --steps is {}",
            model.steps(),
            config.steps
        )));
    }
    let denoiser = model.denoiser()?;
    let n = a.sequences.unwrap_or(loaded.data.motions.len()).min(loaded.data.motions.len());
    if n == 0 {
        return Err(Error::Config("--sequences must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, a.input_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let inputs = loaded.data.views[loaded.rig.reference_index()][..n]
        .iter()
        .map(|clean| {
            let mut noisy = clean.clone();
            if a.input_noise > 0.0 {
                for p in noisy.data_mut() {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
            noisy
        })
        .collect();
    let bench = Benchmark {
        motions: loaded.data.motions[..n].to_vec(),
        inputs,
    };
    let reports = run_ablation(&grid, &bench, denoiser.as_ref(), config)?;
    std::fs::write(&a.out, reports_csv(&reports)?)?;
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&reports)?)?;
    }
    for r in &reports {
        println!(
            "{:<28} mpjpe_root {:>9.3} mm  procrustes {:>9.3} mm",
            r.cell.label,
            r.mean(Alignment::Root),
            r.mean(Alignment::Procrustes)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
