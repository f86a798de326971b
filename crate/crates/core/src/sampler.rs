//! The conditional multi-view ancestral sampling loop.
//!
//! Every step `t = T..1`:
//! 1. the denoiser predicts a clean 2D motion for each virtual view;
//! 2. the reference view's prediction is replaced by the observed input;
//! 3. one 3D motion is triangulated from all views (warm-started);
//! 4. that motion is reprojected into every view;
//! 5. each view's latent is drawn from the DDPM posterior given its reprojection.
//!
//! The clean latents left at `t = 0` are triangulated once more, with the
//! same anchoring, into the returned motion.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{make_rig, project, project_noise, CameraRig, RigParams};
use crate::diffusion::{cosine_schedule, posterior_sample, Denoiser, NoiseSchedule};
use crate::skeleton::{bone_variance_loss, Pose2DSequence, Pose3DSequence, SkeletonTopology};
use crate::triangulate::{
    reprojection_error, view_weights, Objective, OptimizerSettings, DEFAULT_LAMBDA_BONE,
};
use crate::{Error, Result};

/// Every tunable of a lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmasConfig {
    pub views: usize,
    pub steps: usize,
    pub w_ref: f64,
    pub lambda_bone: f64,
    pub optimizer: OptimizerSettings,
    pub rig: RigParams,
    pub reference_index: usize,
    pub seed: u64,
    pub topology: SkeletonTopology,
}

impl Default for CmasConfig {
    fn default() -> Self {
        Self {
            views: 7,
            steps: 100,
            w_ref: 4.0 / 5.0,
            lambda_bone: DEFAULT_LAMBDA_BONE,
            optimizer: OptimizerSettings::default(),
            rig: RigParams::default(),
            reference_index: 0,
            seed: 0,
            topology: SkeletonTopology::human13(),
        }
    }
}

impl CmasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.steps == 0 {
            return Err(Error::Config("views and steps must be at least 1".into()));
        }
        if !(self.w_ref > 0.0 && self.w_ref <= 1.0) {
            return Err(Error::Config(format!("w_ref {} outside (0, 1]", self.w_ref)));
        }
        if !(self.lambda_bone >= 0.0) {
            return Err(Error::Config("lambda_bone must be nonnegative".into()));
        }
        if self.reference_index >= self.views {
            return Err(Error::Config("reference index out of range".into()));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn make_rig(&self) -> Result<CameraRig> {
        make_rig(self.views, &self.rig, self.reference_index)
    }
}

/// Per-view latents `x_t` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewLatents {
    pub t: usize,
    pub latents: Vec<Pose2DSequence>,
}

/// Independent random stream for step `t` and view `v`, derived from `seed`.
pub fn rng_stream(seed: u64, t: usize, v: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 32) | v as u64);
    rng
}

/// Shared 3D standard-normal noise projected into every view.
pub fn init_noise(
    config: &CmasConfig,
    frames: usize,
    rig: &CameraRig,
    rng: &mut impl Rng,
) -> Result<ViewLatents> {
    if frames == 0 {
        return Err(Error::Domain("need at least one frame".into()));
    }
    let joints = config.topology.joint_count();
    let eps: Vec<Vector3<f64>> = (0..frames * joints)
        .map(|_| {
            Vector3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            )
        })
        .collect();
    let latents = rig
        .views()
        .iter()
        .map(|cam| Pose2DSequence::new(frames, joints, project_noise(&eps, cam)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewLatents {
        t: config.steps,
        latents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub loss: f64,
    pub ref_err: f64,
    pub bone_var: f64,
}

#[derive(Debug, Clone)]
pub struct LiftOutput {
    pub motion: Pose3DSequence,
    /// One record per denoising step in execution order, then the final `t = 0` solve.
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Denoiser that returns the projection of a known motion for every view.
pub struct OracleDenoiser {
    projections: Vec<Pose2DSequence>,
}

impl OracleDenoiser {
    pub fn new(truth: &Pose3DSequence, rig: &CameraRig) -> Result<Self> {
        Ok(Self {
            projections: rig
                .views()
                .iter()
                .map(|cam| project(truth, cam))
                .collect::<Result<_>>()?,
        })
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_clean(&self, _x_t: &Pose2DSequence, _t: usize, view: usize) -> Result<Pose2DSequence> {
        self.projections
            .get(view)
            .cloned()
            .ok_or_else(|| Error::Domain(format!("oracle has no view {view}")))
    }

    fn shape(&self) -> Option<(usize, usize)> {
        self.projections.first().map(|p| (p.frames(), p.joints()))
    }
}

/// Lifts `input2d` (observed from the reference view, in rig image units) to 3D
/// on the rig described by `config`.
pub fn lift(input2d: &Pose2DSequence, denoiser: &dyn Denoiser, config: &CmasConfig) -> Result<LiftOutput> {
    config.validate()?;
    let rig = config.make_rig()?;
    lift_with_rig(input2d, denoiser, config, &rig)
}

/// [`lift`] on an explicit rig. `config.views` and `config.reference_index`
/// are taken from the rig.
pub fn lift_with_rig(
    input2d: &Pose2DSequence,
    denoiser: &dyn Denoiser,
    config: &CmasConfig,
    rig: &CameraRig,
) -> Result<LiftOutput> {
    config.validate()?;
    let (frames, joints) = (input2d.frames(), input2d.joints());
    if joints != config.topology.joint_count() {
        return Err(Error::Config(format!(
            "input has {joints} joints, topology has {}",
            config.topology.joint_count()
        )));
    }
    if let Some(shape) = denoiser.shape() {
        if shape != (frames, joints) {
            return Err(Error::Config(format!(
                "input is {frames}x{joints} but the denoiser expects {}x{}",
                shape.0, shape.1
            )));
        }
    }
    let schedule = cosine_schedule(config.steps)?;
    let v0 = rig.reference_index();
    let weights = view_weights(rig.len(), config.w_ref, v0).map_err(|e| Error::Config(e.to_string()))?;
    let topo = &config.topology;

    let mut state = init_noise(config, frames, rig, &mut rng_stream(config.seed, 0, 0))?;
    let mut motion = initial_motion(input2d, rig, config.rig.distance)?;
    let mut diagnostics = Vec::with_capacity(config.steps + 1);

    for t in (1..=config.steps).rev() {
        let targets: Vec<Pose2DSequence> = state
            .latents
            .par_iter()
            .enumerate()
            .map(|(v, x_t)| {
                if v == v0 {
                    Ok(input2d.clone())
                } else {
                    denoiser.predict_clean(x_t, t, v)
                }
            })
            .collect::<Result<_>>()?;
        debug_assert!(targets[v0] == *input2d);

        let objective = Objective::new(&targets, rig, &weights, config.lambda_bone, topo)?;
        motion = objective.minimize(&motion, &config.optimizer)?;
        diagnostics.push(step_diagnostics(t, &objective, &motion, rig, input2d, topo)?);

        let reprojected: Vec<Pose2DSequence> = rig
            .views()
            .iter()
            .map(|cam| project(&motion, cam))
            .collect::<Result<_>>()?;
        state = advance(&schedule, &state, &reprojected, config.seed)?;
    }

    // final triangulation of the clean latents
    let mut targets = state.latents;
    targets[v0] = input2d.clone();
    let objective = Objective::new(&targets, rig, &weights, config.lambda_bone, topo)?;
    motion = objective.minimize(&motion, &config.optimizer)?;
    diagnostics.push(step_diagnostics(0, &objective, &motion, rig, input2d, topo)?);

    Ok(LiftOutput {
        motion,
        diagnostics,
    })
}

/// Reference-view backprojection at constant depth `depth`.
pub fn initial_motion(input2d: &Pose2DSequence, rig: &CameraRig, depth: f64) -> Result<Pose3DSequence> {
    let cam = rig.reference();
    let pp = cam.principal_point();
    let data = input2d
        .data()
        .iter()
        .map(|uv| {
            let uv = if uv.iter().all(|c| c.is_finite()) { *uv } else { pp };
            cam.backproject(&uv, depth)
        })
        .collect();
    Pose3DSequence::new(input2d.frames(), input2d.joints(), data)
}

fn advance(
    schedule: &NoiseSchedule,
    state: &ViewLatents,
    reprojected: &[Pose2DSequence],
    seed: u64,
) -> Result<ViewLatents> {
    let t = state.t;
    let latents: Vec<Pose2DSequence> = state
        .latents
        .par_iter()
        .zip(reprojected.par_iter())
        .enumerate()
        .map(|(v, (x_t, x0))| posterior_sample(schedule, x_t, x0, t, &mut rng_stream(seed, t, v)))
        .collect::<Result<_>>()?;
    if latents
        .iter()
        .any(|l| l.data().iter().any(|p| !p.iter().all(|c| c.is_finite())))
    {
        return Err(Error::Numerical(format!("non-finite latent at step {t}")));
    }
    Ok(ViewLatents { t: t - 1, latents })
}

fn step_diagnostics(
    t: usize,
    objective: &Objective<'_>,
    motion: &Pose3DSequence,
    rig: &CameraRig,
    input2d: &Pose2DSequence,
    topo: &SkeletonTopology,
) -> Result<StepDiagnostics> {
    Ok(StepDiagnostics {
        t,
        loss: objective.total_loss(motion)?,
        ref_err: reprojection_error(motion, rig.reference(), input2d)?,
        bone_var: bone_variance_loss(motion, topo)?,
    })
}

/// Writes diagnostics as JSON lines `{"t", "loss", "ref_err", "bone_var"}`.
pub fn diagnostics_jsonl(diagnostics: &[StepDiagnostics]) -> String {
    diagnostics
        .iter()
        .map(|d| serde_json::to_string(d).expect("diagnostics serialize") + "\n")
        .collect()
}
