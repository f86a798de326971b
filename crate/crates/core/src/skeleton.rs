//! Skeletal topology, pose-sequence containers and the bone-variance term.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Joint names of the default 13-joint tree, in index order.
pub const HUMAN13_NAMES: [&str; 13] = [
    "pelvis",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_knee",
    "l_ankle",
    "r_knee",
    "r_ankle",
];

/// Index of the neck joint in the default tree; the pelvis-neck bone is the torso.
pub const HUMAN13_NECK: usize = 1;

const HUMAN13_BONES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (3, 4),
    (4, 5),
    (1, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (0, 11),
    (11, 12),
];

/// Joint count, bone list and root of a kinematic tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    #[serde(rename = "joints")]
    joint_count: usize,
    root: usize,
    bones: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    names: Vec<String>,
}

impl SkeletonTopology {
    /// Builds a topology, checking that the bones form a tree rooted at `root`.
    pub fn new(joint_count: usize, bones: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let topo = Self {
            joint_count,
            root,
            bones,
            names: Vec::new(),
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if !names.is_empty() && names.len() != self.joint_count {
            return Err(Error::Topology(format!(
                "{} names for {} joints",
                names.len(),
                self.joint_count
            )));
        }
        self.names = names;
        Ok(self)
    }

    /// The default 13-joint, 12-bone human tree rooted at the pelvis.
    pub fn human13() -> Self {
        Self {
            joint_count: 13,
            root: 0,
            bones: HUMAN13_BONES.to_vec(),
            names: HUMAN13_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Index of a joint by name, if names are attached.
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn validate(&self) -> Result<()> {
        let j = self.joint_count;
        if j == 0 {
            return Err(Error::Topology("joint count must be positive".into()));
        }
        if self.root >= j {
            return Err(Error::Topology(format!("root {} out of range", self.root)));
        }
        if self.bones.len() != j - 1 {
            return Err(Error::Topology(format!(
                "a tree over {j} joints needs {} bones, got {}",
                j - 1,
                self.bones.len()
            )));
        }
        let mut parent = vec![None; j];
        for &(p, c) in &self.bones {
            if p >= j || c >= j {
                return Err(Error::Topology(format!("bone ({p}, {c}) out of range")));
            }
            if p == c {
                return Err(Error::Topology(format!("bone ({p}, {c}) is a self loop")));
            }
            if c == self.root {
                return Err(Error::Topology(format!("root {c} used as a bone child")));
            }
            if parent[c].is_some() {
                return Err(Error::Topology(format!("joint {c} has two parents")));
            }
            parent[c] = Some(p);
        }
        // every joint must reach the root by following parents
        for start in 0..j {
            let mut cur = start;
            let mut hops = 0;
            while cur != self.root {
                match parent[cur] {
                    Some(p) => cur = p,
                    None => {
                        return Err(Error::Topology(format!(
                            "joint {start} is not connected to the root"
                        )))
                    }
                }
                hops += 1;
                if hops > j {
                    return Err(Error::Topology("bone graph contains a cycle".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let topo: SkeletonTopology = serde_json::from_str(text)?;
        topo.validate()?;
        if !topo.names.is_empty() && topo.names.len() != topo.joint_count {
            return Err(Error::Topology("names length differs from joint count".into()));
        }
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::human13()
    }
}

/// An `L x J x 3` motion in world coordinates (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3DSequence {
    frames: usize,
    joints: usize,
    data: Vec<Vector3<f64>>,
}

impl Pose3DSequence {
    pub fn new(frames: usize, joints: usize, data: Vec<Vector3<f64>>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Shape("sequence needs at least one frame and joint".into()));
        }
        if data.len() != frames * joints {
            return Err(Error::Shape(format!(
                "expected {} points for {frames}x{joints}, got {}",
                frames * joints,
                data.len()
            )));
        }
        if data.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("non-finite 3D coordinate".into()));
        }
        Ok(Self {
            frames,
            joints,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![Vector3::zeros(); frames * joints],
        }
    }

    /// Builds from per-frame joint lists.
    pub fn from_frames(frames: Vec<Vec<Vector3<f64>>>) -> Result<Self> {
        let l = frames.len();
        let j = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != j) {
            return Err(Error::Shape("ragged frames".into()));
        }
        Self::new(l, j, frames.into_iter().flatten().collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Vector3<f64>> {
        self.data
    }

    pub fn get(&self, frame: usize, joint: usize) -> Vector3<f64> {
        self.data[frame * self.joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[Vector3<f64>] {
        &self.data[frame * self.joints..(frame + 1) * self.joints]
    }

    pub fn map_points(&self, f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            frames: self.frames,
            joints: self.joints,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn check_topology(&self, topo: &SkeletonTopology) -> Result<()> {
        if self.joints != topo.joint_count() {
            return Err(Error::Shape(format!(
                "sequence has {} joints, topology has {}",
                self.joints,
                topo.joint_count()
            )));
        }
        Ok(())
    }

    /// Flattened coordinates, frame-major then joint then axis.
    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(frames: usize, joints: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != frames * joints * 3 {
            return Err(Error::Shape("flat length does not match L*J*3".into()));
        }
        Self::new(
            frames,
            joints,
            flat.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }
}

/// An `L x J x 2` image-space motion with optional per-joint confidence and
/// observation mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2DSequence {
    frames: usize,
    joints: usize,
    data: Vec<Vector2<f64>>,
    confidence: Option<Vec<f64>>,
    mask: Option<Vec<bool>>,
}

impl Pose2DSequence {
    pub fn new(frames: usize, joints: usize, data: Vec<Vector2<f64>>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Shape("sequence needs at least one frame and joint".into()));
        }
        if data.len() != frames * joints {
            return Err(Error::Shape(format!(
                "expected {} points for {frames}x{joints}, got {}",
                frames * joints,
                data.len()
            )));
        }
        if data.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("non-finite 2D coordinate".into()));
        }
        Ok(Self {
            frames,
            joints,
            data,
            confidence: None,
            mask: None,
        })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![Vector2::zeros(); frames * joints],
            confidence: None,
            mask: None,
        }
    }

    /// Attaches an observation mask. Unobserved entries may hold any finite value.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::Shape("mask length differs from L*J".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_confidence(mut self, confidence: Vec<f64>) -> Result<Self> {
        if confidence.len() != self.data.len() {
            return Err(Error::Shape("confidence length differs from L*J".into()));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain("confidence outside [0, 1]".into()));
        }
        self.confidence = Some(confidence);
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[Vector2<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Vector2<f64>] {
        &mut self.data
    }

    pub fn get(&self, frame: usize, joint: usize) -> Vector2<f64> {
        self.data[frame * self.joints + joint]
    }

    pub fn confidence(&self) -> Option<&[f64]> {
        self.confidence.as_deref()
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_observed(&self, index: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[index])
    }

    pub fn same_shape(&self, other: &Pose2DSequence) -> bool {
        self.frames == other.frames && self.joints == other.joints
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(frames: usize, joints: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != frames * joints * 2 {
            return Err(Error::Shape("flat length does not match L*J*2".into()));
        }
        Self::new(
            frames,
            joints,
            flat.chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect(),
        )
    }
}

fn check_frame(frame: &[Vector3<f64>], topo: &SkeletonTopology) -> Result<()> {
    if frame.len() != topo.joint_count() {
        return Err(Error::Shape(format!(
            "frame has {} joints, topology has {}",
            frame.len(),
            topo.joint_count()
        )));
    }
    Ok(())
}

/// Euclidean length of every bone of a single frame, in `topo.bones()` order.
pub fn bone_lengths(frame: &[Vector3<f64>], topo: &SkeletonTopology) -> Result<Vec<f64>> {
    check_frame(frame, topo)?;
    Ok(topo
        .bones()
        .iter()
        .map(|&(p, c)| (frame[c] - frame[p]).norm())
        .collect())
}

/// Per-bone lengths for every frame, `lengths[l][i]`.
fn all_bone_lengths(seq: &Pose3DSequence, topo: &SkeletonTopology) -> Vec<Vec<f64>> {
    (0..seq.frames())
        .map(|l| {
            let f = seq.frame(l);
            topo.bones()
                .iter()
                .map(|&(p, c)| (f[c] - f[p]).norm())
                .collect()
        })
        .collect()
}

fn bone_means(lengths: &[Vec<f64>], bones: usize) -> Vec<f64> {
    let l = lengths.len() as f64;
    (0..bones)
        .map(|i| lengths.iter().map(|row| row[i]).sum::<f64>() / l)
        .collect()
}

/// Mean over bones of the population temporal variance of each bone length.
pub fn bone_variance_loss(seq: &Pose3DSequence, topo: &SkeletonTopology) -> Result<f64> {
    seq.check_topology(topo)?;
    let b = topo.bone_count();
    if b == 0 {
        return Ok(0.0);
    }
    let lengths = all_bone_lengths(seq, topo);
    let means = bone_means(&lengths, b);
    let l = seq.frames() as f64;
    let total: f64 = (0..b)
        .map(|i| {
            lengths
                .iter()
                .map(|row| (row[i] - means[i]).powi(2))
                .sum::<f64>()
                / l
        })
        .sum();
    Ok(total / b as f64)
}

/// Gradient of [`bone_variance_loss`] with respect to every joint coordinate.
///
/// A zero-length bone contributes no gradient.
pub fn bone_variance_gradient(
    seq: &Pose3DSequence,
    topo: &SkeletonTopology,
) -> Result<Vec<Vector3<f64>>> {
    seq.check_topology(topo)?;
    let mut grad = vec![Vector3::zeros(); seq.data().len()];
    accumulate_bone_gradient(seq.data(), seq.joints(), topo, 1.0, &mut grad);
    Ok(grad)
}

/// Adds `scale * d(bone_variance_loss)/dX` into `grad` and returns the scaled loss.
/// Shapes must already be checked.
pub(crate) fn accumulate_bone_gradient(
    points: &[Vector3<f64>],
    joints: usize,
    topo: &SkeletonTopology,
    scale: f64,
    grad: &mut [Vector3<f64>],
) -> f64 {
    let b = topo.bone_count();
    if b == 0 {
        return 0.0;
    }
    let j = joints;
    let l = points.len() / j;
    let lengths: Vec<Vec<f64>> = points
        .chunks_exact(j)
        .map(|f| topo.bones().iter().map(|&(p, c)| (f[c] - f[p]).norm()).collect())
        .collect();
    let means = bone_means(&lengths, b);
    let coef = 2.0 / (b as f64 * l as f64);
    let mut loss = 0.0;
    for (frame, row) in lengths.iter().enumerate() {
        let pts = &points[frame * j..(frame + 1) * j];
        for (i, &(p, c)) in topo.bones().iter().enumerate() {
            let dev = row[i] - means[i];
            loss += dev * dev;
            let len = row[i];
            if len <= f64::EPSILON || dev == 0.0 {
                continue;
            }
            let dir = (pts[c] - pts[p]) / len;
            let g = dir * (scale * coef * dev);
            grad[frame * j + c] += g;
            grad[frame * j + p] -= g;
        }
    }
    scale * loss / (b as f64 * l as f64)
}
