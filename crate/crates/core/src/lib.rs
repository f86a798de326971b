//! Conditional multi-view ancestral sampling (cMAS) for lifting monocular 2D
//! human pose sequences to 3D.
//!
//! A 2D motion diffusion prior is sampled jointly from `V` virtual camera
//! views. At every denoising step the per-view clean predictions are fused
//! into one 3D motion by a weighted triangulation in which the observed
//! reference view carries most of the weight, then reprojected and used to
//! draw the next latent of every view.
//!
//! Module map:
//! - [`skeleton`]: topology, pose containers, bone lengths and bone-variance loss.
//! - [`camera`]: pinhole views, the orbiting virtual rig, projection and its Jacobian.
//! - [`diffusion`]: cosine schedule, forward noising, posterior sampling, the [`Denoiser`] trait.
//! - [`prior`]: analytic Gaussian and fitted linear-regression denoisers.
//! - [`triangulate`]: view weights, weighted reprojection + bone objective, Adam solver.
//! - [`sampler`]: the conditional sampling loop ([`sampler::lift`]).
//! - [`preprocess`]: confidence filtering, discontinuity segmentation, smoothing, normalization.
//! - [`eval`]: MPJPE, synthetic motions and datasets, baseline lifter, ablation harness.
//! - [`io`]: pose JSONL, dataset directories and model files.
//! - [`cli`]: the `cmas` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod diffusion;
mod error;
pub mod eval;
pub mod io;
pub mod preprocess;
pub mod prior;
pub mod sampler;
pub mod skeleton;
pub mod triangulate;

pub use camera::{make_rig, CameraRig, CameraView, RigParams};
pub use diffusion::{cosine_schedule, Denoiser, NoiseSchedule};
pub use error::{Error, Result};
pub use prior::{GaussianMotionPrior, RegressionDenoiser};
pub use sampler::{lift, CmasConfig, LiftOutput, OracleDenoiser};
pub use skeleton::{Pose2DSequence, Pose3DSequence, SkeletonTopology};
pub use triangulate::{triangulate, OptimizerSettings, ViewWeights};
