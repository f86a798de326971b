//! Weighted multi-view triangulation with the bone-variance term.

use cmas::camera::project;
use cmas::eval::{baseline_lift, synth_motion, MotionParams};
use cmas::triangulate::{reprojection_error, view_weights, DEFAULT_LAMBDA_BONE};
use cmas::{make_rig, triangulate, OptimizerSettings, RigParams, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let topo = SkeletonTopology::human13();
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let truth = synth_motion(&topo, 16, &mut ChaCha8Rng::seed_from_u64(3), &MotionParams::default())?;
    let targets: Vec<_> = rig.views().iter().map(|c| project(&truth, c)).collect::<cmas::Result<_>>()?;
    let weights = view_weights(7, 0.8, 0)?;
    println!("view weights {:?}", weights.values());

    let init = baseline_lift(&targets[0], rig.reference(), 7.0)?;
    let out = triangulate(&targets, &rig, &weights, DEFAULT_LAMBDA_BONE, &topo, &init, &OptimizerSettings::default())?;
    let max_err = out
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    println!("max joint error after 1000 Adam iterations: {max_err:.2e} m");
    for (v, cam) in rig.views().iter().enumerate() {
        println!("view {v}: mean reprojection error {:.2e}", reprojection_error(&out, cam, &targets[v])?);
    }
    Ok(())
}
