//! File formats: pose JSONL, synthetic dataset directories and model files.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::diffusion::{cosine_schedule, Denoiser};
use crate::eval::Dataset;
use crate::prior::{AnalyticDenoiser, GaussianMotionPrior, RegressionDenoiser};
use crate::skeleton::{Pose2DSequence, Pose3DSequence, SkeletonTopology};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "cmas-prior/1";
pub const DATASET_FORMAT: &str = "cmas-dataset/1";
pub const MOTIONS_FILE: &str = "motions3d.json";

pub fn view_file_name(v: usize) -> String {
    format!("view_{v}.jsonl")
}

#[derive(Serialize, Deserialize)]
struct Frame2D {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<usize>,
    f: usize,
    xy: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct Frame3D {
    f: usize,
    xyz: Vec<[f64; 3]>,
}

fn frame_lines_2d(seq: &Pose2DSequence, index: Option<usize>, out: &mut String) {
    let j = seq.joints();
    for f in 0..seq.frames() {
        let line = Frame2D {
            seq: index,
            f,
            xy: (0..j).map(|k| [seq.get(f, k).x, seq.get(f, k).y]).collect(),
            mask: Some((0..j).map(|k| seq.is_observed(f * j + k)).collect()),
        };
        out.push_str(&serde_json::to_string(&line).expect("frame serializes"));
        out.push('\n');
    }
}

/// One line per frame: `{"f": idx, "xy": [[x, y], ...], "mask": [bool, ...]}`.
pub fn pose2d_to_jsonl(seq: &Pose2DSequence) -> String {
    let mut out = String::new();
    frame_lines_2d(seq, None, &mut out);
    out
}

fn parse_frames_2d(text: &str) -> Result<Vec<Frame2D>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

fn assemble_2d(frames: &[Frame2D]) -> Result<Pose2DSequence> {
    if frames.is_empty() {
        return Err(Error::Format("no frames".into()));
    }
    let j = frames[0].xy.len();
    let mut data = Vec::with_capacity(frames.len() * j);
    let mut mask = Vec::with_capacity(frames.len() * j);
    for (i, fr) in frames.iter().enumerate() {
        if fr.f != i {
            return Err(Error::Format(format!("expected frame {i}, found {}", fr.f)));
        }
        if fr.xy.len() != j || fr.mask.as_ref().is_some_and(|m| m.len() != j) {
            return Err(Error::Format(format!("frame {i} has a different joint count")));
        }
        data.extend(fr.xy.iter().map(|p| Vector2::new(p[0], p[1])));
        match &fr.mask {
            Some(m) => mask.extend(m),
            None => mask.extend(std::iter::repeat_n(true, j)),
        }
    }
    let seq = Pose2DSequence::new(frames.len(), j, data)?;
    if mask.iter().all(|m| *m) {
        Ok(seq)
    } else {
        seq.with_mask(mask)
    }
}

pub fn pose2d_from_jsonl(text: &str) -> Result<Pose2DSequence> {
    assemble_2d(&parse_frames_2d(text)?)
}

/// One line per frame: `{"f": idx, "xyz": [[x, y, z], ...]}`.
pub fn pose3d_to_jsonl(seq: &Pose3DSequence) -> String {
    let mut out = String::new();
    for f in 0..seq.frames() {
        let line = Frame3D {
            f,
            xyz: seq.frame(f).iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("frame serializes"));
        out.push('\n');
    }
    out
}

pub fn pose3d_from_jsonl(text: &str) -> Result<Pose3DSequence> {
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fr: Frame3D =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        if fr.f != frames.len() {
            return Err(Error::Format(format!("expected frame {}, found {}", frames.len(), fr.f)));
        }
        frames.push(fr.xyz.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect::<Vec<_>>());
    }
    if frames.is_empty() {
        return Err(Error::Format("no frames".into()));
    }
    Pose3DSequence::from_frames(frames).map_err(|e| match e {
        Error::Shape(m) => Error::Format(m),
        other => other,
    })
}

pub fn read_pose2d(path: &Path) -> Result<Pose2DSequence> {
    pose2d_from_jsonl(&fs::read_to_string(path)?)
}

pub fn read_pose3d(path: &Path) -> Result<Pose3DSequence> {
    pose3d_from_jsonl(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct MotionsFile {
    format: String,
    topology: SkeletonTopology,
    rig: serde_json::Value,
    frames: usize,
    joints: usize,
    sequences: Vec<Vec<Vec<[f64; 3]>>>,
}

/// Writes `motions3d.json` plus one `view_k.jsonl` per rig view.
/// Returns the written paths.
pub fn write_dataset(
    dir: &Path,
    data: &Dataset,
    topo: &SkeletonTopology,
    rig: &CameraRig,
) -> Result<Vec<std::path::PathBuf>> {
    let first = data
        .motions
        .first()
        .ok_or_else(|| Error::Domain("empty dataset".into()))?;
    fs::create_dir_all(dir)?;
    let motions = MotionsFile {
        format: DATASET_FORMAT.into(),
        topology: topo.clone(),
        rig: serde_json::from_str(&rig.to_json())?,
        frames: first.frames(),
        joints: first.joints(),
        sequences: data
            .motions
            .iter()
            .map(|m| {
                (0..m.frames())
                    .map(|f| m.frame(f).iter().map(|p| [p.x, p.y, p.z]).collect())
                    .collect()
            })
            .collect(),
    };
    let mut paths = vec![dir.join(MOTIONS_FILE)];
    fs::write(&paths[0], serde_json::to_string(&motions)? + "\n")?;
    for (v, seqs) in data.views.iter().enumerate() {
        let mut text = String::new();
        for (i, s) in seqs.iter().enumerate() {
            frame_lines_2d(s, Some(i), &mut text);
        }
        let path = dir.join(view_file_name(v));
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// A dataset directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub topology: SkeletonTopology,
    pub rig: CameraRig,
    pub data: Dataset,
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} not found", dir.display())));
    }
    let motions_path = dir.join(MOTIONS_FILE);
    if !motions_path.is_file() {
        return Err(Error::Config(format!("{} missing", motions_path.display())));
    }
    let file: MotionsFile = serde_json::from_str(&fs::read_to_string(&motions_path)?)?;
    if file.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unsupported dataset format '{}'", file.format)));
    }
    let rig = CameraRig::from_json(&file.rig.to_string())?;
    let motions = file
        .sequences
        .iter()
        .map(|s| {
            let data: Vec<_> = s.iter().flatten().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            Pose3DSequence::new(s.len(), s.first().map_or(0, Vec::len), data)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("inconsistent motions: {e}")))?;
    if motions.iter().any(|m| m.frames() != file.frames || m.joints() != file.joints) {
        return Err(Error::Config("motions have inconsistent shapes".into()));
    }
    let mut views = Vec::with_capacity(rig.len());
    for v in 0..rig.len() {
        let text = fs::read_to_string(dir.join(view_file_name(v)))?;
        let frames = parse_frames_2d(&text)?;
        let mut seqs = Vec::with_capacity(motions.len());
        let mut start = 0;
        while start < frames.len() {
            let idx = frames[start].seq.unwrap_or(0);
            let end = frames[start..]
                .iter()
                .position(|f| f.seq.unwrap_or(0) != idx)
                .map_or(frames.len(), |p| start + p);
            if idx != seqs.len() {
                return Err(Error::Format(format!("view {v}: sequence {idx} out of order")));
            }
            seqs.push(assemble_2d(&frames[start..end])?);
            start = end;
        }
        if seqs.len() != motions.len() {
            return Err(Error::Config(format!(
                "view {v} has {} sequences, expected {}",
                seqs.len(),
                motions.len()
            )));
        }
        if seqs.iter().any(|s| s.frames() != file.frames || s.joints() != file.joints) {
            return Err(Error::Config(format!("view {v} has inconsistent shapes")));
        }
        views.push(seqs);
    }
    Ok(LoadedDataset {
        topology: file.topology,
        rig,
        data: Dataset { motions, views },
    })
}

/// A fitted denoiser as stored on disk.
#[derive(Debug, Clone)]
pub enum PriorModel {
    Gaussian { prior: GaussianMotionPrior, steps: usize },
    Regression(RegressionDenoiser),
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    kind: String,
    frames: usize,
    joints: usize,
    steps: usize,
    values: usize,
}

impl PriorModel {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            PriorModel::Gaussian { prior, .. } => prior.shape(),
            PriorModel::Regression(r) => r.shape(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            PriorModel::Gaussian { steps, .. } => *steps,
            PriorModel::Regression(r) => r.steps(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PriorModel::Gaussian { .. } => "gaussian",
            PriorModel::Regression(_) => "regression",
        }
    }

    pub fn denoiser(self) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            PriorModel::Gaussian { prior, steps } => {
                Box::new(AnalyticDenoiser::new(prior, cosine_schedule(steps)?))
            }
            PriorModel::Regression(r) => Box::new(r),
        })
    }

    fn payload(&self) -> Vec<f64> {
        match self {
            PriorModel::Gaussian { prior, .. } => prior
                .mean()
                .iter()
                .chain(prior.covariance().iter())
                .copied()
                .collect(),
            PriorModel::Regression(r) => r
                .maps()
                .iter()
                .flat_map(|(a, b)| a.iter().chain(b.iter()).copied())
                .collect(),
        }
    }

    /// A JSON header line followed by the parameters as little-endian f64
    /// (matrices column-major).
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let (frames, joints) = self.shape();
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            kind: self.kind().into(),
            frames,
            joints,
            steps: self.steps(),
            values: payload.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Format("model header missing".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::Format(format!("model header: {e}")))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported model format '{}'", header.format)));
        }
        let body = &bytes[split + 1..];
        if body.len() != header.values * 8 {
            return Err(Error::Format(format!(
                "model payload has {} bytes, header declares {} values",
                body.len(),
                header.values
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let d = header.frames * header.joints * 2;
        if header.steps == 0 {
            return Err(Error::Format("model declares zero steps".into()));
        }
        match header.kind.as_str() {
            "gaussian" => {
                if values.len() != d + d * d {
                    return Err(Error::Format("gaussian payload size mismatch".into()));
                }
                let mean = DVector::from_column_slice(&values[..d]);
                let cov = DMatrix::from_column_slice(d, d, &values[d..]);
                Ok(PriorModel::Gaussian {
                    prior: GaussianMotionPrior::from_moments(header.frames, header.joints, mean, cov)?,
                    steps: header.steps,
                })
            }
            "regression" => {
                let per = d * d + d;
                if values.len() != per * header.steps {
                    return Err(Error::Format("regression payload size mismatch".into()));
                }
                let maps = values
                    .chunks_exact(per)
                    .map(|c| {
                        (
                            DMatrix::from_column_slice(d, d, &c[..d * d]),
                            DVector::from_column_slice(&c[d * d..]),
                        )
                    })
                    .collect();
                Ok(PriorModel::Regression(RegressionDenoiser::from_maps(
                    header.frames,
                    header.joints,
                    maps,
                )?))
            }
            other => Err(Error::Format(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("model file {} not found", path.display())));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads the header line of a model file without parsing the payload.
pub fn model_summary(path: &Path) -> Result<(String, usize, usize, usize)> {
    let mut reader = std::io::BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let h: ModelHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("model header: {e}")))?;
    Ok((h.kind, h.frames, h.joints, h.steps))
}
