//! Pinhole cameras, the orbiting virtual rig and perspective projection.
//!
//! Camera frame convention: `x` right, `y` down, `z` forward along the
//! optical axis. A world point `X` maps to `q = R X + t`, and its image is
//! `pp + f * (q.x / q.z, q.y / q.z)`.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::skeleton::{Pose2DSequence, Pose3DSequence};
use crate::{Error, Result};

pub const DEFAULT_DISTANCE: f64 = 7.0;
pub const DEFAULT_ELEVATION: f64 = PI / 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    focal: f64,
    principal_point: Vector2<f64>,
    center: Vector3<f64>,
}

impl CameraView {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: f64,
        principal_point: Vector2<f64>,
    ) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("camera rotation is not a proper rotation".into()));
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Domain(format!("focal length {focal} must be positive")));
        }
        if !translation.iter().chain(principal_point.iter()).all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite camera parameter".into()));
        }
        Ok(Self {
            rotation,
            translation,
            focal,
            principal_point,
            center: -(rotation.transpose() * translation),
        })
    }

    /// A camera at `position` looking at `target`, with world `+y` as up.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        focal: f64,
        principal_point: Vector2<f64>,
    ) -> Result<Self> {
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(Error::Domain("camera position coincides with target".into()));
        }
        let forward = forward.normalize();
        let up = Vector3::y();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Domain("viewing direction parallel to world up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        Self::new(rotation, translation, focal, principal_point)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        self.principal_point
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let q = self.to_camera(p);
        if q.z <= 0.0 {
            return None;
        }
        Some(self.principal_point + Vector2::new(q.x, q.y) * (self.focal / q.z))
    }

    /// The world point on the ray through image point `uv` at camera-frame depth `depth`.
    pub fn backproject(&self, uv: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let d = (uv - self.principal_point) / self.focal;
        let q = Vector3::new(d.x * depth, d.y * depth, depth);
        self.rotation.transpose() * (q - self.translation)
    }

    /// Moves `p` along the optical axis so that its camera-frame depth is at least `min_depth`.
    /// Returns true if the point was moved.
    pub fn clamp_depth(&self, p: &mut Vector3<f64>, min_depth: f64) -> bool {
        let z = self.to_camera(p).z;
        if z >= min_depth {
            return false;
        }
        let axis = self.rotation.row(2).transpose();
        *p += axis * (min_depth - z);
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    views: Vec<CameraView>,
    reference_index: usize,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>, reference_index: usize) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Domain("rig needs at least one view".into()));
        }
        if reference_index >= views.len() {
            return Err(Error::Domain(format!(
                "reference index {reference_index} out of range for {} views",
                views.len()
            )));
        }
        Ok(Self {
            views,
            reference_index,
        })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &CameraView {
        &self.views[v]
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &CameraView {
        &self.views[self.reference_index]
    }

    pub fn to_json(&self) -> String {
        let file = RigFile {
            views: self
                .views
                .iter()
                .map(|v| ViewFile {
                    r: v.rotation.transpose().as_slice().to_vec(),
                    t: v.translation.as_slice().to_vec(),
                    f: v.focal,
                    pp: [v.principal_point.x, v.principal_point.y],
                })
                .collect(),
            reference_index: self.reference_index,
        };
        serde_json::to_string(&file).expect("rig serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RigFile = serde_json::from_str(text)?;
        let views = file
            .views
            .into_iter()
            .map(|v| {
                if v.r.len() != 9 || v.t.len() != 3 {
                    return Err(Error::Format("view needs 9 rotation and 3 translation values".into()));
                }
                CameraView::new(
                    Matrix3::from_row_slice(&v.r),
                    Vector3::from_column_slice(&v.t),
                    v.f,
                    Vector2::new(v.pp[0], v.pp[1]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, file.reference_index)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ViewFile {
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
    f: f64,
    pp: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    views: Vec<ViewFile>,
    reference_index: usize,
}

/// Geometry of the orbiting virtual rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigParams {
    pub distance: f64,
    pub elevation: f64,
    pub subject_center: [f64; 3],
    /// Focal length in normalized image units; `None` uses `distance`.
    pub focal: Option<f64>,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            distance: DEFAULT_DISTANCE,
            elevation: DEFAULT_ELEVATION,
            subject_center: [0.0; 3],
            focal: None,
        }
    }
}

impl RigParams {
    pub fn focal(&self) -> f64 {
        self.focal.unwrap_or(self.distance)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.subject_center)
    }
}

/// Azimuth of rig camera `k` out of `views`.
pub fn rig_azimuth(k: usize, views: usize) -> f64 {
    TAU * k as f64 / views as f64
}

/// `views` cameras on a circle around the subject, all at the same distance
/// and elevation, with evenly spaced azimuths starting at 0 for view 0.
pub fn make_rig(views: usize, params: &RigParams, reference_index: usize) -> Result<CameraRig> {
    if views == 0 {
        return Err(Error::Domain("rig needs at least one view".into()));
    }
    if !(params.distance > 0.0) {
        return Err(Error::Domain("rig distance must be positive".into()));
    }
    let center = params.center();
    let (se, ce) = params.elevation.sin_cos();
    let cams = (0..views)
        .map(|k| {
            let (sa, ca) = rig_azimuth(k, views).sin_cos();
            let offset = Vector3::new(ce * sa, se, ce * ca) * params.distance;
            CameraView::look_at(center + offset, center, params.focal(), Vector2::zeros())
        })
        .collect::<Result<Vec<_>>>()?;
    CameraRig::new(cams, reference_index)
}

/// Perspective projection of every joint of a motion.
pub fn project(x: &Pose3DSequence, view: &CameraView) -> Result<Pose2DSequence> {
    let j = x.joints();
    let pts = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            view.project_point(p).ok_or_else(|| Error::Projection {
                frame: i / j,
                joint: i % j,
                depth: view.to_camera(p).z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Pose2DSequence::new(x.frames(), j, pts)
}

/// `J^T r` per joint, where `J` is the Jacobian of the image point with
/// respect to the world point.
pub fn project_gradient(
    x: &Pose3DSequence,
    view: &CameraView,
    residual: &[Vector2<f64>],
) -> Result<Vec<Vector3<f64>>> {
    if residual.len() != x.data().len() {
        return Err(Error::Shape("residual length differs from L*J".into()));
    }
    let j = x.joints();
    let rt = view.rotation.transpose();
    x.data()
        .iter()
        .zip(residual)
        .enumerate()
        .map(|(i, (p, r))| {
            let q = view.to_camera(p);
            if q.z <= 0.0 {
                return Err(Error::Projection {
                    frame: i / j,
                    joint: i % j,
                    depth: q.z,
                });
            }
            let s = view.focal / q.z;
            let dq = Vector3::new(s * r.x, s * r.y, -s * (r.x * q.x + r.y * q.y) / q.z);
            Ok(rt * dq)
        })
        .collect()
}

/// Rotates 3D noise into the camera frame and drops depth. Preserves
/// standard-normal marginals.
pub fn project_noise(eps: &[Vector3<f64>], view: &CameraView) -> Vec<Vector2<f64>> {
    eps.iter()
        .map(|e| {
            let q = view.rotation * e;
            Vector2::new(q.x, q.y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_seq(rng: &mut impl Rng, l: usize, j: usize, spread: f64) -> Pose3DSequence {
        let data = (0..l * j)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                )
            })
            .collect();
        Pose3DSequence::new(l, j, data).unwrap()
    }

    #[test]
    fn seven_view_rig_geometry() {
        let params = RigParams::default();
        let rig = make_rig(7, &params, 0).unwrap();
        assert_eq!(rig.len(), 7);
        for (k, cam) in rig.views().iter().enumerate() {
            let offset = cam.center() - params.center();
            assert!((offset.norm() - 7.0).abs() < 1e-9);
            assert!((offset.y / offset.norm() - (PI / 16.0).sin()).abs() < 1e-12);
            let az = offset.x.atan2(offset.z).rem_euclid(TAU);
            let expected = TAU * k as f64 / 7.0;
            let diff = (az - expected).abs();
            assert!(diff < 1e-9 || (TAU - diff) < 1e-9, "view {k}: {az} vs {expected}");
        }
    }

    #[test]
    fn single_view_rig_and_zero_views() {
        let rig = make_rig(1, &RigParams::default(), 0).unwrap();
        let c = rig.view(0).center();
        assert!(c.x.abs() < 1e-12 && c.z > 0.0);
        assert!(matches!(make_rig(0, &RigParams::default(), 0), Err(Error::Domain(_))));
        assert!(make_rig(3, &RigParams::default(), 3).is_err());
    }

    #[test]
    fn subject_center_projects_to_principal_point() {
        for v in [1, 2, 5, 7, 9] {
            let params = RigParams {
                subject_center: [0.3, -0.2, 1.0],
                ..RigParams::default()
            };
            let rig = make_rig(v, &params, 0).unwrap();
            for cam in rig.views() {
                let uv = cam.project_point(&params.center()).unwrap();
                assert!((uv - cam.principal_point()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lateral_offset_follows_similar_triangles() {
        let cam = CameraView::new(
            Matrix3::identity(),
            Vector3::zeros(),
            2.5,
            Vector2::new(0.1, -0.2),
        )
        .unwrap();
        let (d, z) = (0.4, 5.0);
        let uv = cam.project_point(&Vector3::new(d, 0.0, z)).unwrap();
        assert_relative_eq!(uv.x - 0.1, 2.5 * d / z, epsilon = 1e-15);
        assert_relative_eq!(uv.y, -0.2, epsilon = 1e-15);
    }

    #[test]
    fn ray_motion_keeps_image_point() {
        let rig = make_rig(5, &RigParams::default(), 0).unwrap();
        let p = Vector3::new(0.3, 0.8, -0.4);
        for cam in rig.views() {
            let uv = cam.project_point(&p).unwrap();
            let further = cam.center() + (p - cam.center()) * 1.7;
            let uv2 = cam.project_point(&further).unwrap();
            assert!((uv - uv2).norm() < 1e-12);
            let back = cam.backproject(&uv, cam.to_camera(&p).z);
            assert!((back - p).norm() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_reports_frame_and_joint() {
        let rig = make_rig(1, &RigParams::default(), 0).unwrap();
        let mut seq = Pose3DSequence::zeros(3, 2);
        seq.data_mut()[2 * 2 + 1] = Vector3::new(0.0, 0.0, 9.0);
        match project(&seq, rig.view(0)) {
            Err(Error::Projection { frame, joint, .. }) => assert_eq!((frame, joint), (2, 1)),
            other => panic!("expected projection error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_of_zero_residual_is_zero() {
        let rig = make_rig(3, &RigParams::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_seq(&mut rng, 2, 3, 1.0);
        let g = project_gradient(&x, rig.view(1), &[Vector2::zeros(); 6]).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn x_residual_gradient_has_no_camera_y_component() {
        let rig = make_rig(4, &RigParams::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_seq(&mut rng, 3, 4, 1.0);
        let residual: Vec<_> = (0..12).map(|_| Vector2::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        for cam in rig.views() {
            let g = project_gradient(&x, cam, &residual).unwrap();
            for gw in g {
                assert!((cam.rotation() * gw).y.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rig = make_rig(5, &RigParams::default(), 0).unwrap();
        let h = 1e-5;
        for trial in 0..100 {
            let x = random_seq(&mut rng, 2, 3, 1.0);
            let cam = rig.view(trial % 5);
            let residual: Vec<_> = (0..6)
                .map(|_| Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let inner = |s: &Pose3DSequence| -> f64 {
                project(s, cam)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&residual)
                    .map(|(a, r)| a.dot(r))
                    .sum()
            };
            let analytic: Vec<f64> = project_gradient(&x, cam, &residual)
                .unwrap()
                .iter()
                .flat_map(|g| [g.x, g.y, g.z])
                .collect();
            let flat = x.to_flat();
            let numeric: Vec<f64> = (0..flat.len())
                .map(|k| {
                    let mut p = flat.clone();
                    let mut m = flat.clone();
                    p[k] += h;
                    m[k] -= h;
                    (inner(&Pose3DSequence::from_flat(2, 3, &p).unwrap())
                        - inner(&Pose3DSequence::from_flat(2, 3, &m).unwrap()))
                        / (2.0 * h)
                })
                .collect();
            let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let norm = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
            assert!(diff < 1e-4 * norm, "trial {trial}: rel err {}", diff / norm);
        }
    }

    #[test]
    fn noise_projection_axis_aligned_and_zero() {
        let cam = CameraView::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0), 1.0, Vector2::zeros())
            .unwrap();
        let eps = vec![Vector3::new(0.5, -1.5, 2.0), Vector3::new(-0.1, 0.2, 0.3)];
        let out = project_noise(&eps, &cam);
        assert_eq!(out, vec![Vector2::new(0.5, -1.5), Vector2::new(-0.1, 0.2)]);
        let zero = project_noise(&[Vector3::zeros(); 4], &cam);
        assert!(zero.iter().all(|v| *v == Vector2::zeros()));
    }

    #[test]
    fn noise_projection_keeps_standard_normal_moments() {
        let rig = make_rig(7, &RigParams::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let eps: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                )
            })
            .collect();
        for cam in rig.views() {
            let out = project_noise(&eps, cam);
            for axis in 0..2 {
                let mean = out.iter().map(|v| v[axis]).sum::<f64>() / n as f64;
                let var = out.iter().map(|v| (v[axis] - mean).powi(2)).sum::<f64>() / n as f64;
                assert!(mean.abs() < 0.02, "mean {mean}");
                assert!((0.96..=1.04).contains(&var), "var {var}");
            }
        }
    }

    #[test]
    fn rig_json_round_trip() {
        let rig = make_rig(3, &RigParams::default(), 1).unwrap();
        let back = CameraRig::from_json(&rig.to_json()).unwrap();
        assert_eq!(back.reference_index(), 1);
        for (a, b) in rig.views().iter().zip(back.views()) {
            assert!((a.rotation() - b.rotation()).abs().max() < 1e-15);
            assert!((a.center() - b.center()).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_improper_rotation_and_bad_focal() {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraView::new(flip, Vector3::zeros(), 1.0, Vector2::zeros()).is_err());
        assert!(CameraView::new(Matrix3::identity(), Vector3::zeros(), 0.0, Vector2::zeros()).is_err());
    }

    #[test]
    fn clamp_depth_moves_along_axis() {
        let rig = make_rig(1, &RigParams::default(), 0).unwrap();
        let cam = rig.view(0);
        let mut p = cam.center() + Vector3::new(0.0, 0.0, 0.5);
        assert!(cam.clamp_depth(&mut p, 0.1));
        assert!((cam.to_camera(&p).z - 0.1).abs() < 1e-12);
        assert!(!cam.clamp_depth(&mut p, 0.1 - 1e-9));
    }
}
