//! MPJPE, synthetic motions, a constant-depth baseline and the ablation harness.

use std::time::Instant;

use log::info;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{make_rig, project, CameraRig, CameraView, RigParams};
use crate::diffusion::Denoiser;
use crate::sampler::{lift_with_rig, CmasConfig};
use crate::skeleton::{bone_variance_loss, Pose2DSequence, Pose3DSequence, SkeletonTopology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    None,
    Root,
    Procrustes,
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Alignment::None),
            "root" => Ok(Alignment::Root),
            "procrustes" => Ok(Alignment::Procrustes),
            other => Err(Error::Config(format!("unknown alignment '{other}'"))),
        }
    }
}

impl std::fmt::Display for Alignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Alignment::None => "none",
            Alignment::Root => "root",
            Alignment::Procrustes => "procrustes",
        })
    }
}

/// Mean per-joint position error in millimeters (inputs in meters).
///
/// `Root` subtracts joint `root` per frame from both motions; `Procrustes`
/// aligns `pred` to `gt` with one similarity transform per sequence.
pub fn mpjpe_with_root(
    pred: &Pose3DSequence,
    gt: &Pose3DSequence,
    alignment: Alignment,
    root: usize,
) -> Result<f64> {
    if pred.frames() != gt.frames() || pred.joints() != gt.joints() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.frames(),
            pred.joints(),
            gt.frames(),
            gt.joints()
        )));
    }
    if root >= gt.joints() {
        return Err(Error::Shape(format!("root joint {root} out of range")));
    }
    let j = gt.joints();
    let aligned: Vec<Vector3<f64>> = match alignment {
        Alignment::None => pred.data().to_vec(),
        Alignment::Root => pred
            .data()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let f = i / j;
                p - pred.get(f, root) + gt.get(f, root)
            })
            .collect(),
        Alignment::Procrustes => {
            let (s, r, t) = similarity_align(pred.data(), gt.data());
            pred.data().iter().map(|p| r * p * s + t).collect()
        }
    };
    let total: f64 = aligned
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(1000.0 * total / gt.data().len() as f64)
}

/// MPJPE with joint 0 as the root.
pub fn mpjpe(pred: &Pose3DSequence, gt: &Pose3DSequence, alignment: Alignment) -> Result<f64> {
    mpjpe_with_root(pred, gt, alignment, 0)
}

/// Least-squares similarity `(s, R, t)` with `s R src + t ~ dst` (Umeyama).
fn similarity_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s <= f64::EPSILON {
        return (1.0, Matrix3::identity(), mu_d - mu_s);
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sign = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * vt;
    let trace = (Matrix3::from_diagonal(&svd.singular_values) * sign).trace();
    let s = trace / var_s;
    let t = mu_d - r * mu_s * s;
    (s, r, t)
}

/// Shape of the sinusoidal joint-angle animation used by [`synth_motion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Peak joint-angle excursion (radians).
    pub amplitude: f64,
    /// Range of angular frequencies (radians per frame).
    pub min_frequency: f64,
    pub max_frequency: f64,
    /// Peak root sway (meters), also scaled by `amplitude`.
    pub root_sway: f64,
    /// Draw the global heading uniformly at random.
    pub random_heading: bool,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            min_frequency: 0.1,
            max_frequency: 0.4,
            root_sway: 0.15,
            random_heading: true,
        }
    }
}

/// Rest-pose joint positions (meters, y up, subject facing +z) of the default tree.
fn human13_rest() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.0, 0.50, 0.0),
        Vector3::new(0.0, 0.75, 0.02),
        Vector3::new(0.18, 0.48, 0.0),
        Vector3::new(0.20, 0.20, 0.0),
        Vector3::new(0.21, -0.06, 0.03),
        Vector3::new(-0.18, 0.48, 0.0),
        Vector3::new(-0.20, 0.20, 0.0),
        Vector3::new(-0.21, -0.06, 0.03),
        Vector3::new(0.11, -0.44, 0.02),
        Vector3::new(0.11, -0.86, -0.02),
        Vector3::new(-0.11, -0.44, 0.02),
        Vector3::new(-0.11, -0.86, -0.02),
    ]
}

fn rest_pose(topo: &SkeletonTopology, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    if *topo == SkeletonTopology::human13() {
        return human13_rest();
    }
    let mut rest = vec![Vector3::zeros(); topo.joint_count()];
    for &(p, c) in &bone_order(topo) {
        let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let dir = if dir.norm() < 1e-3 { Vector3::y() } else { dir.normalize() };
        rest[c] = rest[p] + dir * 0.3;
    }
    rest
}

/// Bones ordered so that every parent is placed before its children.
fn bone_order(topo: &SkeletonTopology) -> Vec<(usize, usize)> {
    let mut placed = vec![false; topo.joint_count()];
    placed[topo.root()] = true;
    let mut order = Vec::with_capacity(topo.bone_count());
    while order.len() < topo.bone_count() {
        for &(p, c) in topo.bones() {
            if placed[p] && !placed[c] {
                placed[c] = true;
                order.push((p, c));
            }
        }
    }
    order
}

/// A rigid skeleton animated by smooth sinusoidal joint rotations plus root sway.
/// Bone lengths are constant by construction.
pub fn synth_motion(
    topo: &SkeletonTopology,
    frames: usize,
    rng: &mut impl Rng,
    params: &MotionParams,
) -> Result<Pose3DSequence> {
    if frames == 0 {
        return Err(Error::Domain("need at least one frame".into()));
    }
    let rest = rest_pose(topo, rng);
    let order = bone_order(topo);
    let heading = if params.random_heading {
        rng.gen_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let mut wave = || {
        let w = rng.gen_range(params.min_frequency..=params.max_frequency.max(params.min_frequency));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.3..1.0);
        (w, phase, amp)
    };
    // two bend axes per bone, plus heading and two sway axes for the root
    let bone_waves: Vec<[(f64, f64, f64); 2]> = (0..order.len()).map(|_| [wave(), wave()]).collect();
    let root_waves = [wave(), wave(), wave()];
    let eval = |(w, phase, amp): (f64, f64, f64), l: f64| amp * (w * l + phase).sin();

    let j = topo.joint_count();
    let mut data = Vec::with_capacity(frames * j);
    for l in 0..frames {
        let lf = l as f64;
        let mut rot = vec![Rotation3::identity(); j];
        let mut pos = vec![Vector3::zeros(); j];
        let yaw = heading + params.amplitude * 0.5 * eval(root_waves[0], lf);
        rot[topo.root()] = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        pos[topo.root()] = Vector3::new(
            params.amplitude * params.root_sway * eval(root_waves[1], lf),
            0.0,
            params.amplitude * params.root_sway * eval(root_waves[2], lf),
        );
        for (k, &(p, c)) in order.iter().enumerate() {
            let [wx, wz] = bone_waves[k];
            let local = Rotation3::from_axis_angle(&Vector3::x_axis(), params.amplitude * eval(wx, lf))
                * Rotation3::from_axis_angle(&Vector3::z_axis(), params.amplitude * eval(wz, lf));
            rot[c] = rot[p] * local;
            pos[c] = pos[p] + rot[c] * (rest[c] - rest[p]);
        }
        data.extend(pos);
    }
    Pose3DSequence::new(frames, j, data)
}

/// Synthetic motions with their projections through every rig view.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub motions: Vec<Pose3DSequence>,
    /// `views[v][i]` is motion `i` seen from view `v`.
    pub views: Vec<Vec<Pose2DSequence>>,
}

impl Dataset {
    /// All projections pooled across views, for fitting a view-agnostic prior.
    pub fn pooled_projections(&self) -> Vec<Pose2DSequence> {
        self.views.iter().flatten().cloned().collect()
    }
}

const MAX_RETRIES: usize = 16;

pub fn make_dataset(
    n: usize,
    topo: &SkeletonTopology,
    rig: &CameraRig,
    frames: usize,
    rng: &mut impl Rng,
    params: &MotionParams,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("dataset needs at least one motion".into()));
    }
    let mut motions = Vec::with_capacity(n);
    let mut views = vec![Vec::with_capacity(n); rig.len()];
    for i in 0..n {
        let mut attempt = 0;
        loop {
            let motion = synth_motion(topo, frames, rng, params)?;
            let projected: Result<Vec<_>> = rig.views().iter().map(|c| project(&motion, c)).collect();
            match projected {
                Ok(p) => {
                    for (v, seq) in p.into_iter().enumerate() {
                        views[v].push(seq);
                    }
                    motions.push(motion);
                    break;
                }
                Err(e @ Error::Projection { .. }) => {
                    attempt += 1;
                    if attempt >= MAX_RETRIES {
                        return Err(Error::Numerical(format!(
                            "motion {i} stays behind a camera after {MAX_RETRIES} retries: {e}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Dataset { motions, views })
}

/// Places every joint on its reference-camera ray at camera-frame depth `depth`.
pub fn baseline_lift(input2d: &Pose2DSequence, view: &CameraView, depth: f64) -> Result<Pose3DSequence> {
    if !(depth > 0.0) {
        return Err(Error::Domain("baseline depth must be positive".into()));
    }
    let data = input2d.data().iter().map(|uv| view.backproject(uv, depth)).collect();
    Pose3DSequence::new(input2d.frames(), input2d.joints(), data)
}

/// Ground-truth motions and their (possibly noisy) reference-view observations.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub motions: Vec<Pose3DSequence>,
    pub inputs: Vec<Pose2DSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub sequences: usize,
    pub frames: usize,
    /// Standard deviation of i.i.d. Gaussian noise added to the 2D input.
    pub input_noise: f64,
    pub motion: MotionParams,
    pub rig: RigParams,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            sequences: 200,
            frames: 32,
            input_noise: 0.005,
            motion: MotionParams::default(),
            rig: RigParams::default(),
            seed: 0,
        }
    }
}

impl Benchmark {
    /// Motions observed from rig slot 0 (azimuth 0), which is the reference
    /// view of every rig built by [`make_rig`] regardless of the view count.
    pub fn synthetic(spec: &BenchmarkSpec, topo: &SkeletonTopology) -> Result<Self> {
        let rig = make_rig(1, &spec.rig, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let data = make_dataset(spec.sequences, topo, &rig, spec.frames, &mut rng, &spec.motion)?;
        let noise = Normal::new(0.0, spec.input_noise.max(0.0))
            .map_err(|e| Error::Domain(e.to_string()))?;
        let inputs = data.views[0]
            .iter()
            .map(|clean| {
                let mut noisy = clean.clone();
                if spec.input_noise > 0.0 {
                    for p in noisy.data_mut() {
                        p.x += noise.sample(&mut rng);
                        p.y += noise.sample(&mut rng);
                    }
                }
                noisy
            })
            .collect();
        Ok(Self {
            motions: data.motions,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }
}

/// One grid cell of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub views: usize,
    pub w_ref: f64,
    pub lambda_bone: f64,
}

impl AblationCell {
    pub fn new(label: impl Into<String>, views: usize, w_ref: f64, lambda_bone: f64) -> Self {
        Self {
            label: label.into(),
            views,
            w_ref,
            lambda_bone,
        }
    }

    fn key(&self) -> (usize, u64, u64) {
        (self.views, self.w_ref.to_bits(), self.lambda_bone.to_bits())
    }
}

pub const DEFAULT_VIEW_GRID: [usize; 4] = [3, 5, 7, 9];

pub const DEFAULT_WEIGHT_GRID: [f64; 10] = [
    1.0 / 7.0,
    1.0 / 4.0,
    1.0 / 3.0,
    2.0 / 5.0,
    1.0 / 2.0,
    2.0 / 3.0,
    3.0 / 4.0,
    4.0 / 5.0,
    9.0 / 10.0,
    1.0,
];

pub fn view_grid(views: &[usize], w_ref: f64, lambda_bone: f64) -> Vec<AblationCell> {
    views
        .iter()
        .map(|&v| AblationCell::new(format!("views={v}"), v, w_ref, lambda_bone))
        .collect()
}

pub fn weight_grid(views: usize, weights: &[f64], lambda_bone: f64) -> Vec<AblationCell> {
    weights
        .iter()
        .map(|&w| AblationCell::new(format!("w_ref={w:.4}"), views, w, lambda_bone))
        .collect()
}

/// Unweighted geometry, weighted geometry, weighted geometry plus bone loss.
pub fn component_grid(views: usize, w_ref: f64, lambda_bone: f64) -> Vec<AblationCell> {
    vec![
        AblationCell::new("base", views, 1.0 / views as f64, 0.0),
        AblationCell::new("weighted", views, w_ref, 0.0),
        AblationCell::new("weighted+bone", views, w_ref, lambda_bone),
    ]
}

/// The three sweeps with their default values.
pub fn default_grid() -> Vec<AblationCell> {
    let mut grid = view_grid(&DEFAULT_VIEW_GRID, 0.8, 0.001);
    grid.extend(component_grid(7, 0.8, 0.001));
    grid.extend(weight_grid(7, &DEFAULT_WEIGHT_GRID, 0.001));
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cell: AblationCell,
    pub steps: usize,
    pub iterations: usize,
    pub mpjpe_none: Vec<f64>,
    pub mpjpe_root: Vec<f64>,
    pub mpjpe_procrustes: Vec<f64>,
    pub bone_variance: Vec<f64>,
    pub runtime_s: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

impl BenchmarkReport {
    pub fn mean(&self, alignment: Alignment) -> f64 {
        mean(self.values(alignment))
    }

    pub fn median(&self, alignment: Alignment) -> f64 {
        median(self.values(alignment))
    }

    pub fn values(&self, alignment: Alignment) -> &[f64] {
        match alignment {
            Alignment::None => &self.mpjpe_none,
            Alignment::Root => &self.mpjpe_root,
            Alignment::Procrustes => &self.mpjpe_procrustes,
        }
    }

    pub fn mean_bone_variance(&self) -> f64 {
        mean(&self.bone_variance)
    }
}

/// Lifts every benchmark sequence once per grid cell. Cells with the same
/// `(views, w_ref, lambda_bone)` run once; reports are sorted by that key.
pub fn run_ablation(
    grid: &[AblationCell],
    bench: &Benchmark,
    denoiser: &dyn Denoiser,
    base: &CmasConfig,
) -> Result<Vec<BenchmarkReport>> {
    if bench.is_empty() {
        return Err(Error::Domain("benchmark has no sequences".into()));
    }
    let mut cells: Vec<AblationCell> = Vec::new();
    for cell in grid {
        match cells.iter_mut().find(|c| c.key() == cell.key()) {
            Some(existing) => {
                if !existing.label.split('|').any(|l| l == cell.label) {
                    existing.label = format!("{}|{}", existing.label, cell.label);
                }
            }
            None => cells.push(cell.clone()),
        }
    }
    cells.sort_by(|a, b| {
        (a.views, a.w_ref, a.lambda_bone)
            .partial_cmp(&(b.views, b.w_ref, b.lambda_bone))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut reports = Vec::with_capacity(cells.len());
    for cell in cells {
        let config = CmasConfig {
            views: cell.views,
            w_ref: cell.w_ref,
            lambda_bone: cell.lambda_bone,
            reference_index: 0,
            ..base.clone()
        };
        config.validate()?;
        let rig = config.make_rig()?;
        let start = Instant::now();
        let per_seq: Vec<(f64, f64, f64, f64)> = bench
            .motions
            .par_iter()
            .zip(bench.inputs.par_iter())
            .enumerate()
            .map(|(i, (gt, input))| {
                let cfg = CmasConfig {
                    seed: base.seed.wrapping_add(i as u64),
                    ..config.clone()
                };
                let out = lift_with_rig(input, denoiser, &cfg, &rig)?.motion;
                let root = cfg.topology.root();
                Ok((
                    mpjpe_with_root(&out, gt, Alignment::None, root)?,
                    mpjpe_with_root(&out, gt, Alignment::Root, root)?,
                    mpjpe_with_root(&out, gt, Alignment::Procrustes, root)?,
                    bone_variance_loss(&out, &cfg.topology)?,
                ))
            })
            .collect::<Result<_>>()?;
        let report = BenchmarkReport {
            steps: config.steps,
            iterations: config.optimizer.iterations,
            mpjpe_none: per_seq.iter().map(|r| r.0).collect(),
            mpjpe_root: per_seq.iter().map(|r| r.1).collect(),
            mpjpe_procrustes: per_seq.iter().map(|r| r.2).collect(),
            bone_variance: per_seq.iter().map(|r| r.3).collect(),
            runtime_s: start.elapsed().as_secs_f64(),
            cell,
        };
        info!(
            "{}: mpjpe root {:.2} mm, none {:.2} mm, procrustes {:.2} mm ({:.1} s)",
            report.cell.label,
            report.mean(Alignment::Root),
            report.mean(Alignment::None),
            report.mean(Alignment::Procrustes),
            report.runtime_s
        );
        reports.push(report);
    }
    Ok(reports)
}

/// Per-motion baseline MPJPE (millimeters) for the constant-depth lifter.
pub fn baseline_report(bench: &Benchmark, rig_params: &RigParams, alignment: Alignment) -> Result<Vec<f64>> {
    let rig = make_rig(1, rig_params, 0)?;
    bench
        .motions
        .iter()
        .zip(&bench.inputs)
        .map(|(gt, input)| mpjpe(&baseline_lift(input, rig.reference(), rig_params.distance)?, gt, alignment))
        .collect()
}

/// CSV with one row per grid cell.
pub fn reports_csv(reports: &[BenchmarkReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "views",
        "w_ref",
        "lambda_bone",
        "steps",
        "iterations",
        "sequences",
        "mpjpe_none",
        "mpjpe_root",
        "mpjpe_procrustes",
        "median_root",
        "bone_var",
        "runtime_s",
    ])
    .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.cell.label.clone(),
            r.cell.views.to_string(),
            format!("{:.6}", r.cell.w_ref),
            r.cell.lambda_bone.to_string(),
            r.steps.to_string(),
            r.iterations.to_string(),
            r.mpjpe_root.len().to_string(),
            format!("{:.4}", r.mean(Alignment::None)),
            format!("{:.4}", r.mean(Alignment::Root)),
            format!("{:.4}", r.mean(Alignment::Procrustes)),
            format!("{:.4}", r.median(Alignment::Root)),
            format!("{:.6e}", r.mean_bone_variance()),
            format!("{:.3}", r.runtime_s),
        ])
        .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
        .map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::bone_lengths;
    use crate::triangulate::{triangulate, view_weights, OptimizerSettings};

    fn small_motion(seed: u64) -> Pose3DSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth_motion(&SkeletonTopology::human13(), 8, &mut rng, &MotionParams::default()).unwrap()
    }

    #[test]
    fn mpjpe_of_identical_motions_is_zero() {
        let m = small_motion(1);
        for a in [Alignment::None, Alignment::Root, Alignment::Procrustes] {
            assert!(mpjpe(&m, &m, a).unwrap() < 1e-9);
        }
    }

    #[test]
    fn mpjpe_offset_case() {
        let gt = small_motion(2);
        let pred = gt.map_points(|p| p + Vector3::new(0.003, 0.004, 0.0));
        assert!((mpjpe(&pred, &gt, Alignment::None).unwrap() - 5.0).abs() < 1e-9);
        assert!(mpjpe(&pred, &gt, Alignment::Root).unwrap() < 1e-9);
        assert!(matches!(
            mpjpe(&Pose3DSequence::zeros(2, 13), &gt, Alignment::None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mpjpe_symmetry_and_root_invariance() {
        let a = small_motion(3);
        let b = small_motion(4);
        let ab = mpjpe(&a, &b, Alignment::None).unwrap();
        let ba = mpjpe(&b, &a, Alignment::None).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        let mut shifted = a.clone();
        let j = a.joints();
        for (i, p) in shifted.data_mut().iter_mut().enumerate() {
            *p += Vector3::new(0.1 * (i / j) as f64, -0.2, 0.05 * (i / j) as f64);
        }
        let r0 = mpjpe(&a, &b, Alignment::Root).unwrap();
        let r1 = mpjpe(&shifted, &b, Alignment::Root).unwrap();
        assert!((r0 - r1).abs() < 1e-9);
    }

    #[test]
    fn procrustes_removes_similarity_transforms() {
        let gt = small_motion(5);
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let pred = gt.map_points(|p| rot * p * 1.7 + Vector3::new(1.0, 2.0, -3.0));
        assert!(mpjpe(&pred, &gt, Alignment::Procrustes).unwrap() < 1e-6);
        assert!(mpjpe(&pred, &gt, Alignment::Root).unwrap() > 10.0);
    }

    #[test]
    fn synthetic_motion_is_rigid_and_reproducible() {
        let topo = SkeletonTopology::human13();
        let m = small_motion(6);
        assert!(bone_variance_loss(&m, &topo).unwrap() < 1e-12);
        assert_eq!(m, small_motion(6));
        assert_ne!(m, small_motion(7));

        let still = MotionParams {
            amplitude: 0.0,
            ..MotionParams::default()
        };
        let s = synth_motion(&topo, 5, &mut ChaCha8Rng::seed_from_u64(1), &still).unwrap();
        for l in 1..5 {
            assert_eq!(s.frame(l), s.frame(0));
        }
        let lengths = bone_lengths(s.frame(0), &topo).unwrap();
        let rest = human13_rest();
        for (len, &(p, c)) in lengths.iter().zip(topo.bones()) {
            assert!((len - (rest[c] - rest[p]).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_motion_on_custom_topology() {
        let topo = SkeletonTopology::new(4, vec![(2, 0), (2, 1), (1, 3)], 2).unwrap();
        let m = synth_motion(&topo, 6, &mut ChaCha8Rng::seed_from_u64(3), &MotionParams::default()).unwrap();
        assert!(bone_variance_loss(&m, &topo).unwrap() < 1e-12);
    }

    #[test]
    fn dataset_shapes_and_reproducibility() {
        let topo = SkeletonTopology::human13();
        let rig = make_rig(3, &RigParams::default(), 0).unwrap();
        let a = make_dataset(1, &topo, &rig, 4, &mut ChaCha8Rng::seed_from_u64(1), &MotionParams::default()).unwrap();
        assert_eq!(a.motions.len(), 1);
        assert_eq!(a.views.len(), 3);
        assert!(a.views.iter().all(|v| v.len() == 1));
        let b = make_dataset(1, &topo, &rig, 4, &mut ChaCha8Rng::seed_from_u64(1), &MotionParams::default()).unwrap();
        assert_eq!(a.motions, b.motions);
        assert_eq!(a.views, b.views);
        assert!(make_dataset(0, &topo, &rig, 4, &mut ChaCha8Rng::seed_from_u64(1), &MotionParams::default()).is_err());
    }

    #[test]
    fn dataset_round_trip_through_triangulation() {
        let topo = SkeletonTopology::human13();
        let rig = make_rig(7, &RigParams::default(), 0).unwrap();
        let data = make_dataset(2, &topo, &rig, 4, &mut ChaCha8Rng::seed_from_u64(2), &MotionParams::default()).unwrap();
        let w = view_weights(7, 0.8, 0).unwrap();
        for (i, truth) in data.motions.iter().enumerate() {
            let targets: Vec<_> = data.views.iter().map(|v| v[i].clone()).collect();
            let init = baseline_lift(&targets[0], rig.view(0), 7.0).unwrap();
            let out = triangulate(&targets, &rig, &w, 0.001, &topo, &init, &OptimizerSettings::default()).unwrap();
            let err = out.data().iter().zip(truth.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-3, "max error {err}");
        }
    }

    #[test]
    fn baseline_inverts_reference_projection() {
        let rig = make_rig(1, &RigParams::default(), 0).unwrap();
        let cam = rig.reference();
        let m = small_motion(8);
        let input = project(&m, cam).unwrap();
        let lifted = baseline_lift(&input, cam, 7.0).unwrap();
        let back = project(&lifted, cam).unwrap();
        for (a, b) in back.data().iter().zip(input.data()) {
            assert!((a - b).norm() < 1e-9);
        }
        let flat = Pose2DSequence::zeros(2, 3);
        let on_axis = baseline_lift(&flat, cam, 4.0).unwrap();
        let axis = cam.rotation().row(2).transpose();
        for p in on_axis.data() {
            let rel = p - cam.center();
            assert!((rel - axis * 4.0).norm() < 1e-12);
        }
    }

    #[test]
    fn default_grids() {
        let views: Vec<_> = view_grid(&DEFAULT_VIEW_GRID, 0.8, 0.001).iter().map(|c| c.views).collect();
        assert_eq!(views, vec![3, 5, 7, 9]);
        let weights = weight_grid(7, &DEFAULT_WEIGHT_GRID, 0.001);
        assert_eq!(weights.len(), 10);
        assert_eq!(weights[0].w_ref, 1.0 / 7.0);
        assert_eq!(weights[7].w_ref, 0.8);
        assert_eq!(weights[9].w_ref, 1.0);
        let comps = component_grid(7, 0.8, 0.001);
        assert_eq!(comps[0].w_ref, 1.0 / 7.0);
        assert_eq!(comps[0].lambda_bone, 0.0);
        assert_eq!(comps[2].lambda_bone, 0.001);
    }

    #[test]
    fn single_cell_ablation_is_deterministic() {
        let topo = SkeletonTopology::human13();
        let spec = BenchmarkSpec {
            sequences: 2,
            frames: 4,
            ..BenchmarkSpec::default()
        };
        let bench = Benchmark::synthetic(&spec, &topo).unwrap();
        let rig = make_rig(3, &RigParams::default(), 0).unwrap();
        let oracle_motion = bench.motions[0].clone();
        let oracle = crate::sampler::OracleDenoiser::new(&oracle_motion, &rig).unwrap();
        let base = CmasConfig {
            steps: 3,
            optimizer: OptimizerSettings {
                iterations: 20,
                ..OptimizerSettings::default()
            },
            ..CmasConfig::default()
        };
        let grid = [AblationCell::new("only", 3, 0.8, 0.001)];
        let a = run_ablation(&grid, &bench, &oracle, &base).unwrap();
        let b = run_ablation(&grid, &bench, &oracle, &base).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].mpjpe_root, b[0].mpjpe_root);
        assert_eq!(a[0].bone_variance, b[0].bone_variance);
        let csv = reports_csv(&a).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("label,views,w_ref,lambda_bone"));

        let dup = [grid[0].clone(), AblationCell::new("again", 3, 0.8, 0.001)];
        let merged = run_ablation(&dup, &bench, &oracle, &base).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].cell.label, "only|again");
    }
}
