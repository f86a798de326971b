//! Cleaning of raw 2D keypoint tracks: confidence filtering, discontinuity
//! segmentation, temporal Gaussian smoothing and image-frame normalization.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, DEFAULT_DISTANCE};
use crate::skeleton::{Pose2DSequence, HUMAN13_NECK};
use crate::{Error, Result};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SMOOTH_SIGMA: f64 = 1.0;
/// Pelvis-to-neck length (meters) of the canonical 2 m subject.
pub const CANONICAL_TORSO: f64 = 0.6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSource {
    pub video_id: Option<String>,
    pub fps: Option<f64>,
}

/// A pixel-space keypoint track, row-major `frames x joints`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPoseTrack {
    frames: usize,
    joints: usize,
    coords: Vec<Vector2<f64>>,
    confidence: Vec<f64>,
    mask: Vec<bool>,
    /// Index of this track's first frame in the source video.
    pub start_frame: usize,
    pub source: TrackSource,
}

impl RawPoseTrack {
    pub fn new(frames: usize, joints: usize, coords: Vec<Vector2<f64>>, confidence: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Shape("track needs at least one frame and joint".into()));
        }
        if coords.len() != frames * joints || confidence.len() != frames * joints {
            return Err(Error::Shape(format!(
                "track {frames}x{joints} got {} coordinates and {} confidences",
                coords.len(),
                confidence.len()
            )));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain("confidence outside [0, 1]".into()));
        }
        if coords.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("non-finite keypoint".into()));
        }
        Ok(Self {
            frames,
            joints,
            mask: vec![true; coords.len()],
            coords,
            confidence,
            start_frame: 0,
            source: TrackSource::default(),
        })
    }

    /// Fully confident track from per-frame joint lists.
    pub fn from_frames(frames: Vec<Vec<Vector2<f64>>>) -> Result<Self> {
        let l = frames.len();
        let j = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != j) {
            return Err(Error::Shape("frames have different joint counts".into()));
        }
        let coords: Vec<_> = frames.into_iter().flatten().collect();
        let n = coords.len();
        Self::new(l, j, coords, vec![1.0; n])
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.coords.len() {
            return Err(Error::Shape("mask length differs from L*J".into()));
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[Vector2<f64>] {
        &self.coords
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, frame: usize, joint: usize) -> Vector2<f64> {
        self.coords[frame * self.joints + joint]
    }

    pub fn is_observed(&self, frame: usize, joint: usize) -> bool {
        self.mask[frame * self.joints + joint]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    fn slice(&self, start: usize, end: usize) -> Self {
        let (a, b) = (start * self.joints, end * self.joints);
        Self {
            frames: end - start,
            joints: self.joints,
            coords: self.coords[a..b].to_vec(),
            confidence: self.confidence[a..b].to_vec(),
            mask: self.mask[a..b].to_vec(),
            start_frame: self.start_frame + start,
            source: self.source.clone(),
        }
    }

    pub fn to_sequence(&self) -> Result<Pose2DSequence> {
        Pose2DSequence::new(self.frames, self.joints, self.coords.clone())?
            .with_confidence(self.confidence.clone())?
            .with_mask(self.mask.clone())
    }
}

/// Masks every joint whose confidence is strictly below `threshold`.
/// Coordinates are kept; existing masks are preserved.
pub fn filter_low_confidence(track: &RawPoseTrack, threshold: f64) -> RawPoseTrack {
    let mut out = track.clone();
    for (m, c) in out.mask.iter_mut().zip(&track.confidence) {
        if *c < threshold {
            *m = false;
        }
    }
    out
}

/// Root-mean-square over joints of the per-joint displacement between two
/// frames, using only joints observed in both. `None` if no joint qualifies.
pub fn jump_norm(track: &RawPoseTrack, prev: usize, next: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..track.joints {
        if track.is_observed(prev, j) && track.is_observed(next, j) {
            sum += (track.get(next, j) - track.get(prev, j)).norm_squared();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Frames `f` such that a cut falls between `f - 1` and `f`.
pub fn discontinuities(track: &RawPoseTrack, threshold: f64) -> Vec<usize> {
    (1..track.frames)
        .filter(|&f| jump_norm(track, f - 1, f).is_some_and(|d| d > threshold))
        .collect()
}

/// Splits the track at every discontinuity and drops single-frame pieces.
pub fn segment_discontinuities(track: &RawPoseTrack, threshold: f64) -> Vec<RawPoseTrack> {
    let mut bounds = vec![0];
    bounds.extend(discontinuities(track, threshold));
    bounds.push(track.frames);
    bounds
        .windows(2)
        .filter(|w| w[1] - w[0] > 1)
        .map(|w| track.slice(w[0], w[1]))
        .collect()
}

/// Mask-aware temporal Gaussian smoothing with a kernel truncated at `3 sigma`
/// and renormalized over the available observed frames. A masked entry with
/// an observed neighbor inside the kernel becomes observed (interpolated).
pub fn gaussian_smooth(track: &RawPoseTrack, sigma: f64) -> RawPoseTrack {
    if !(sigma > 0.0) {
        return track.clone();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=radius)
        .map(|d| (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let (l, jn) = (track.frames, track.joints);
    let mut out = track.clone();
    for j in 0..jn {
        for f in 0..l {
            let lo = f.saturating_sub(radius);
            let hi = (f + radius).min(l - 1);
            let mut acc = Vector2::zeros();
            let mut wsum = 0.0;
            for g in lo..=hi {
                if track.is_observed(g, j) {
                    let w = kernel[f.abs_diff(g)];
                    acc += track.get(g, j) * w;
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                let i = f * jn + j;
                out.coords[i] = acc / wsum;
                out.mask[i] = true;
            }
        }
    }
    out
}

/// `normalized = scale * (raw + offset) + principal_point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: [f64; 2],
    pub principal_point: [f64; 2],
}

impl Normalization {
    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        (p + Vector2::from(self.offset)) * self.scale + Vector2::from(self.principal_point)
    }

    pub fn invert(&self, p: &Vector2<f64>) -> Vector2<f64> {
        (p - Vector2::from(self.principal_point)) / self.scale - Vector2::from(self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub root: usize,
    pub neck: usize,
    /// Camera-to-subject distance used for the canonical projected torso.
    pub distance: f64,
    pub torso_length: f64,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            root: 0,
            neck: HUMAN13_NECK,
            distance: DEFAULT_DISTANCE,
            torso_length: CANONICAL_TORSO,
        }
    }
}

impl NormalizeOptions {
    pub fn target_torso(&self, view: &CameraView) -> f64 {
        view.focal() * self.torso_length / self.distance
    }
}

/// Moves the mean observed root to the principal point and scales the median
/// root-to-neck image distance to the canonical projected torso.
pub fn normalize(
    track: &RawPoseTrack,
    view: &CameraView,
    options: &NormalizeOptions,
) -> Result<(RawPoseTrack, Normalization)> {
    if options.root >= track.joints || options.neck >= track.joints {
        return Err(Error::Shape("root or neck joint out of range".into()));
    }
    for f in 0..track.frames {
        if !(0..track.joints).any(|j| track.is_observed(f, j)) {
            return Err(Error::Normalization(format!("frame {f} has no observed joint")));
        }
    }
    let roots: Vec<_> = (0..track.frames)
        .filter(|&f| track.is_observed(f, options.root))
        .map(|f| track.get(f, options.root))
        .collect();
    if roots.is_empty() {
        return Err(Error::Normalization("root joint never observed".into()));
    }
    let root_mean = roots.iter().sum::<Vector2<f64>>() / roots.len() as f64;
    let mut torsos: Vec<f64> = (0..track.frames)
        .filter(|&f| track.is_observed(f, options.root) && track.is_observed(f, options.neck))
        .map(|f| (track.get(f, options.neck) - track.get(f, options.root)).norm())
        .collect();
    if torsos.is_empty() {
        return Err(Error::Normalization("no frame observes both root and neck".into()));
    }
    torsos.sort_by(f64::total_cmp);
    let m = torsos.len() / 2;
    let torso = if torsos.len().is_multiple_of(2) {
        0.5 * (torsos[m - 1] + torsos[m])
    } else {
        torsos[m]
    };
    if !(torso > 1e-12) {
        return Err(Error::Normalization("zero torso length".into()));
    }
    let pp = view.principal_point();
    let norm = Normalization {
        scale: options.target_torso(view) / torso,
        offset: [-root_mean.x, -root_mean.y],
        principal_point: [pp.x, pp.y],
    };
    let mut out = track.clone();
    for p in &mut out.coords {
        *p = norm.apply(p);
    }
    Ok((out, norm))
}

pub fn denormalize(track: &RawPoseTrack, norm: &Normalization) -> RawPoseTrack {
    let mut out = track.clone();
    for p in &mut out.coords {
        *p = norm.invert(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub confidence_threshold: f64,
    pub jump_threshold: f64,
    pub sigma: f64,
    pub normalize: NormalizeOptions,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            jump_threshold: DEFAULT_JUMP_THRESHOLD,
            sigma: DEFAULT_SMOOTH_SIGMA,
            normalize: NormalizeOptions::default(),
        }
    }
}

/// filter, normalize, segment, smooth.
pub fn preprocess(
    track: &RawPoseTrack,
    view: &CameraView,
    options: &PreprocessOptions,
) -> Result<(Vec<RawPoseTrack>, Normalization)> {
    let filtered = filter_low_confidence(track, options.confidence_threshold);
    let (normalized, norm) = normalize(&filtered, view, &options.normalize)?;
    let segments = segment_discontinuities(&normalized, options.jump_threshold)
        .iter()
        .map(|s| gaussian_smooth(s, options.sigma))
        .collect();
    Ok((segments, norm))
}

/// Source-keypoint indices averaged into each target joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMapping {
    pub source_joints: usize,
    pub map: Vec<SourceJoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceJoint {
    One(usize),
    Mean(Vec<usize>),
}

impl SourceJoint {
    fn indices(&self) -> &[usize] {
        match self {
            SourceJoint::One(i) => std::slice::from_ref(i),
            SourceJoint::Mean(v) => v,
        }
    }
}

impl JointMapping {
    /// COCO-17 keypoints onto the default 13-joint tree. Pelvis is the hip
    /// midpoint, neck the shoulder midpoint, head the nose.
    pub fn coco17_to_human13() -> Self {
        use SourceJoint::*;
        Self {
            source_joints: 17,
            map: vec![
                Mean(vec![11, 12]),
                Mean(vec![5, 6]),
                One(0),
                One(5),
                One(7),
                One(9),
                One(6),
                One(8),
                One(10),
                One(13),
                One(15),
                One(14),
                One(16),
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (j, s) in self.map.iter().enumerate() {
            let idx = s.indices();
            if idx.is_empty() || idx.iter().any(|&i| i >= self.source_joints) {
                return Err(Error::Config(format!("joint mapping entry {j} is invalid")));
            }
        }
        if self.map.is_empty() {
            return Err(Error::Config("joint mapping is empty".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct AlphaPoseFrame {
    keypoints: Vec<f64>,
}

/// Parses an AlphaPose-style JSON array of `{"keypoints": [x, y, c, ...]}`.
/// Averaged joints take the mean position and the minimum confidence.
pub fn parse_alphapose(text: &str, mapping: &JointMapping) -> Result<RawPoseTrack> {
    mapping.validate()?;
    let frames: Vec<AlphaPoseFrame> = serde_json::from_str(text)?;
    if frames.is_empty() {
        return Err(Error::Format("no frames in keypoint file".into()));
    }
    let mut coords = Vec::with_capacity(frames.len() * mapping.map.len());
    let mut conf = Vec::with_capacity(coords.capacity());
    for (f, frame) in frames.iter().enumerate() {
        if frame.keypoints.len() != 3 * mapping.source_joints {
            return Err(Error::Format(format!(
                "frame {f}: expected {} keypoint values, got {}",
                3 * mapping.source_joints,
                frame.keypoints.len()
            )));
        }
        for target in &mapping.map {
            let idx = target.indices();
            let mut p = Vector2::zeros();
            let mut c = f64::INFINITY;
            for &i in idx {
                let k = &frame.keypoints[3 * i..3 * i + 3];
                p += Vector2::new(k[0], k[1]);
                c = c.min(k[2]);
            }
            coords.push(p / idx.len() as f64);
            conf.push(c.clamp(0.0, 1.0));
        }
    }
    RawPoseTrack::new(frames.len(), mapping.map.len(), coords, conf)
}
