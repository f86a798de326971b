//! Weighted multi-view triangulation with a bone-length regularizer.
//!
//! The objective is
//! `sum_v a_v |P(X, v) - target_v|^2 + lambda_bone * bone_variance(X)`,
//! summed over every observed frame, joint and image coordinate, and
//! minimized with Adam.

use log::debug;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraRig, CameraView};
use crate::skeleton::{accumulate_bone_gradient, bone_variance_loss, Pose2DSequence, Pose3DSequence, SkeletonTopology};
use crate::{Error, Result};

/// Iterates are kept at least this far in front of every camera (meters).
pub const MIN_DEPTH: f64 = 0.1;

pub const DEFAULT_LAMBDA_BONE: f64 = 0.001;

/// Per-view weights of the reprojection term.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewWeights {
    values: Vec<f64>,
    reference_index: usize,
}

impl ViewWeights {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weights multiplied by a positive constant. The result no longer sums to one.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            reference_index: self.reference_index,
        }
    }
}

/// `w_ref` on the reference view and `(1 - w_ref) / (V - 1)` on every other view.
pub fn view_weights(views: usize, w_ref: f64, reference_index: usize) -> Result<ViewWeights> {
    if views == 0 {
        return Err(Error::Domain("need at least one view".into()));
    }
    if reference_index >= views {
        return Err(Error::Domain(format!("reference index {reference_index} out of range")));
    }
    if !(w_ref > 0.0 && w_ref <= 1.0) {
        return Err(Error::Domain(format!("reference weight {w_ref} outside (0, 1]")));
    }
    if views == 1 {
        if w_ref != 1.0 {
            return Err(Error::Domain("a single view must carry weight 1".into()));
        }
        return Ok(ViewWeights {
            values: vec![1.0],
            reference_index,
        });
    }
    let other = (1.0 - w_ref) / (views - 1) as f64;
    let values = (0..views)
        .map(|v| if v == reference_index { w_ref } else { other })
        .collect();
    Ok(ViewWeights {
        values,
        reference_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Domain("iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Domain("moment decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Camera parameters and targets unpacked for the inner loop.
struct PackedView {
    rot: [f64; 9],
    trans: [f64; 3],
    focal: f64,
    pp: [f64; 2],
    weight: f64,
    // per point: target u, target v, 1.0 if observed else 0.0
    targets: Vec<[f64; 3]>,
}

impl PackedView {
    fn new(cam: &CameraView, weight: f64, target: &Pose2DSequence) -> Self {
        let r = cam.rotation();
        let t = cam.translation();
        let pp = cam.principal_point();
        let targets = target
            .data()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if target.is_observed(i) {
                    [p.x, p.y, 1.0]
                } else {
                    [0.0, 0.0, 0.0]
                }
            })
            .collect();
        Self {
            rot: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            trans: [t.x, t.y, t.z],
            focal: cam.focal(),
            pp: [pp.x, pp.y],
            weight,
            targets,
        }
    }

    #[inline(always)]
    fn depth(&self, p: &Vector3<f64>) -> f64 {
        let r = &self.rot;
        r[6] * p.x + r[7] * p.y + r[8] * p.z + self.trans[2]
    }

    /// Loss of point `i`, adding `d loss / d p` into `grad`.
    #[inline(always)]
    fn accumulate(&self, i: usize, p: &Vector3<f64>, grad: &mut Vector3<f64>) -> f64 {
        let tg = &self.targets[i];
        let w = self.weight * tg[2];
        if w == 0.0 {
            return 0.0;
        }
        let r = &self.rot;
        let qx = r[0] * p.x + r[1] * p.y + r[2] * p.z + self.trans[0];
        let qy = r[3] * p.x + r[4] * p.y + r[5] * p.z + self.trans[1];
        let qz = r[6] * p.x + r[7] * p.y + r[8] * p.z + self.trans[2];
        let inv = 1.0 / qz;
        let s = self.focal * inv;
        let ex = self.pp[0] + s * qx - tg[0];
        let ey = self.pp[1] + s * qy - tg[1];
        let k = 2.0 * w * s;
        let gx = k * ex;
        let gy = k * ey;
        let gz = -(gx * qx + gy * qy) * inv;
        grad.x += r[0] * gx + r[3] * gy + r[6] * gz;
        grad.y += r[1] * gx + r[4] * gy + r[7] * gz;
        grad.z += r[2] * gx + r[5] * gy + r[8] * gz;
        w * (ex * ex + ey * ey)
    }
}

/// The triangulation objective bound to its targets, rig and weights.
pub struct Objective<'a> {
    views: Vec<PackedView>,
    cams: &'a CameraRig,
    topo: &'a SkeletonTopology,
    lambda_bone: f64,
    frames: usize,
    joints: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        targets: &[Pose2DSequence],
        rig: &'a CameraRig,
        weights: &ViewWeights,
        lambda_bone: f64,
        topo: &'a SkeletonTopology,
    ) -> Result<Self> {
        if targets.len() != rig.len() || weights.len() != rig.len() {
            return Err(Error::Shape(format!(
                "{} targets and {} weights for {} views",
                targets.len(),
                weights.len(),
                rig.len()
            )));
        }
        if !(lambda_bone >= 0.0 && lambda_bone.is_finite()) {
            return Err(Error::Domain("lambda_bone must be nonnegative".into()));
        }
        let first = &targets[0];
        if targets.iter().any(|t| !t.same_shape(first)) {
            return Err(Error::Shape("targets differ in shape".into()));
        }
        if first.joints() != topo.joint_count() {
            return Err(Error::Shape(format!(
                "targets have {} joints, topology has {}",
                first.joints(),
                topo.joint_count()
            )));
        }
        let views = rig
            .views()
            .iter()
            .zip(targets)
            .zip(weights.values())
            .map(|((cam, tgt), &w)| PackedView::new(cam, w, tgt))
            .collect();
        Ok(Self {
            views,
            cams: rig,
            topo,
            lambda_bone,
            frames: first.frames(),
            joints: first.joints(),
        })
    }

    fn check(&self, x: &Pose3DSequence) -> Result<()> {
        if x.frames() != self.frames || x.joints() != self.joints {
            return Err(Error::Shape(format!(
                "motion {}x{} vs targets {}x{}",
                x.frames(),
                x.joints(),
                self.frames,
                self.joints
            )));
        }
        Ok(())
    }

    fn check_depths(&self, points: &[Vector3<f64>]) -> Result<()> {
        for (i, p) in points.iter().enumerate() {
            for v in &self.views {
                let z = v.depth(p);
                if z <= 0.0 {
                    return Err(Error::Projection {
                        frame: i / self.joints,
                        joint: i % self.joints,
                        depth: z,
                    });
                }
            }
        }
        Ok(())
    }

    /// Reprojection part only; adds its gradient into `grad`.
    fn geometry_into(&self, points: &[Vector3<f64>], grad: &mut [Vector3<f64>]) -> f64 {
        let mut loss = 0.0;
        for v in &self.views {
            if v.weight == 0.0 {
                continue;
            }
            for (i, (p, g)) in points.iter().zip(grad.iter_mut()).enumerate() {
                loss += v.accumulate(i, p, g);
            }
        }
        loss
    }

    /// Total loss; overwrites `grad` with its gradient.
    fn loss_and_gradient_into(&self, points: &[Vector3<f64>], grad: &mut [Vector3<f64>]) -> f64 {
        grad.iter_mut().for_each(|g| *g = Vector3::zeros());
        let mut loss = self.geometry_into(points, grad);
        if self.lambda_bone > 0.0 {
            loss += accumulate_bone_gradient(points, self.joints, self.topo, self.lambda_bone, grad);
        }
        loss
    }

    pub fn geometry_loss(&self, x: &Pose3DSequence) -> Result<f64> {
        Ok(self.geometry_gradient(x)?.0)
    }

    pub fn geometry_gradient(&self, x: &Pose3DSequence) -> Result<(f64, Vec<Vector3<f64>>)> {
        self.check(x)?;
        self.check_depths(x.data())?;
        let mut grad = vec![Vector3::zeros(); x.data().len()];
        let loss = self.geometry_into(x.data(), &mut grad);
        Ok((loss, grad))
    }

    pub fn total_loss(&self, x: &Pose3DSequence) -> Result<f64> {
        Ok(self.total_gradient(x)?.0)
    }

    pub fn total_gradient(&self, x: &Pose3DSequence) -> Result<(f64, Vec<Vector3<f64>>)> {
        self.check(x)?;
        self.check_depths(x.data())?;
        let mut grad = vec![Vector3::zeros(); x.data().len()];
        let loss = self.loss_and_gradient_into(x.data(), &mut grad);
        Ok((loss, grad))
    }

    /// Pushes every point at least [`MIN_DEPTH`] in front of every camera.
    fn clamp_depths(&self, points: &mut [Vector3<f64>]) -> usize {
        let mut moved = 0;
        for p in points.iter_mut() {
            // a push in front of one camera can move the point behind another
            for _ in 0..4 {
                let mut any = false;
                for (v, cam) in self.views.iter().zip(self.cams.views()) {
                    if v.depth(p) < MIN_DEPTH {
                        any |= cam.clamp_depth(p, MIN_DEPTH);
                    }
                }
                if !any {
                    break;
                }
                moved += 1;
            }
        }
        moved
    }

    /// Runs Adam from `init` and returns the lowest-loss iterate seen.
    pub fn minimize(&self, init: &Pose3DSequence, settings: &OptimizerSettings) -> Result<Pose3DSequence> {
        settings.validate()?;
        self.check(init)?;
        let n = init.data().len();
        let mut x: Vec<Vector3<f64>> = init.data().to_vec();
        let mut clamped = self.clamp_depths(&mut x);
        let mut grad = vec![Vector3::zeros(); n];
        let mut m = vec![Vector3::<f64>::zeros(); n];
        let mut v = vec![Vector3::<f64>::zeros(); n];
        let mut best = x.clone();
        let mut best_loss = f64::INFINITY;
        let (b1, b2) = (settings.beta1, settings.beta2);
        let (mut b1t, mut b2t) = (1.0, 1.0);

        for _ in 0..settings.iterations {
            let loss = self.loss_and_gradient_into(&x, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Numerical("triangulation loss became non-finite".into()));
            }
            if loss < best_loss {
                best_loss = loss;
                best.copy_from_slice(&x);
            }
            b1t *= b1;
            b2t *= b2;
            let step = settings.learning_rate / (1.0 - b1t);
            let vcorr = 1.0 / (1.0 - b2t);
            for k in 0..n {
                let g = grad[k];
                m[k] = m[k] * b1 + g * (1.0 - b1);
                v[k] = v[k] * b2 + g.component_mul(&g) * (1.0 - b2);
                let mk = m[k];
                let vk = v[k];
                let p = &mut x[k];
                p.x -= step * mk.x / ((vk.x * vcorr).sqrt() + settings.epsilon);
                p.y -= step * mk.y / ((vk.y * vcorr).sqrt() + settings.epsilon);
                p.z -= step * mk.z / ((vk.z * vcorr).sqrt() + settings.epsilon);
            }
            clamped += self.clamp_depths(&mut x);
        }
        let loss = self.loss_and_gradient_into(&x, &mut grad);
        if loss < best_loss {
            best.copy_from_slice(&x);
        }
        if clamped > 0 {
            debug!("triangulation clamped {clamped} point depths to {MIN_DEPTH} m");
        }
        Pose3DSequence::new(self.frames, self.joints, best)
    }
}

/// Weighted reprojection error of `x` against `targets`.
pub fn geometry_loss(
    x: &Pose3DSequence,
    targets: &[Pose2DSequence],
    rig: &CameraRig,
    weights: &ViewWeights,
) -> Result<f64> {
    let topo = trivial_topology(x.joints())?;
    Objective::new(targets, rig, weights, 0.0, &topo)?.geometry_loss(x)
}

/// Gradient of [`geometry_loss`] with respect to every joint coordinate.
pub fn geometry_gradient(
    x: &Pose3DSequence,
    targets: &[Pose2DSequence],
    rig: &CameraRig,
    weights: &ViewWeights,
) -> Result<Vec<Vector3<f64>>> {
    let topo = trivial_topology(x.joints())?;
    Ok(Objective::new(targets, rig, weights, 0.0, &topo)?
        .geometry_gradient(x)?
        .1)
}

// geometry terms never look at bones; a star tree satisfies the joint-count check
fn trivial_topology(joints: usize) -> Result<SkeletonTopology> {
    SkeletonTopology::new(joints, (1..joints).map(|c| (0, c)).collect(), 0)
}

/// `geometry_loss + lambda_bone * bone_variance_loss`.
pub fn total_loss(
    x: &Pose3DSequence,
    targets: &[Pose2DSequence],
    rig: &CameraRig,
    weights: &ViewWeights,
    lambda_bone: f64,
    topo: &SkeletonTopology,
) -> Result<f64> {
    let geometry = geometry_loss(x, targets, rig, weights)?;
    if lambda_bone == 0.0 {
        return Ok(geometry);
    }
    Ok(geometry + lambda_bone * bone_variance_loss(x, topo)?)
}

pub fn total_gradient(
    x: &Pose3DSequence,
    targets: &[Pose2DSequence],
    rig: &CameraRig,
    weights: &ViewWeights,
    lambda_bone: f64,
    topo: &SkeletonTopology,
) -> Result<Vec<Vector3<f64>>> {
    Ok(Objective::new(targets, rig, weights, lambda_bone, topo)?
        .total_gradient(x)?
        .1)
}

/// Minimizes the total loss from `init` with Adam; never returns an iterate
/// worse than `init`.
pub fn triangulate(
    targets: &[Pose2DSequence],
    rig: &CameraRig,
    weights: &ViewWeights,
    lambda_bone: f64,
    topo: &SkeletonTopology,
    init: &Pose3DSequence,
    settings: &OptimizerSettings,
) -> Result<Pose3DSequence> {
    Objective::new(targets, rig, weights, lambda_bone, topo)?.minimize(init, settings)
}

/// Mean Euclidean image distance between `project(x, view)` and `target` over observed joints.
pub fn reprojection_error(x: &Pose3DSequence, view: &CameraView, target: &Pose2DSequence) -> Result<f64> {
    let proj = crate::camera::project(x, view)?;
    if !proj.same_shape(target) {
        return Err(Error::Shape("reprojection target shape".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (a, b)) in proj.data().iter().zip(target.data()).enumerate() {
        if target.is_observed(i) {
            sum += (a - b).norm();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Largest per-coordinate reprojection residual over observed joints.
pub fn max_reprojection_residual(
    x: &Pose3DSequence,
    view: &CameraView,
    target: &Pose2DSequence,
) -> Result<f64> {
    let proj = crate::camera::project(x, view)?;
    Ok(proj
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .filter(|(i, _)| target.is_observed(*i))
        .map(|(_, (a, b)): (usize, (&Vector2<f64>, &Vector2<f64>))| (a - b).amax())
        .fold(0.0, f64::max))
}
