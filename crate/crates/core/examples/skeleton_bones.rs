//! Bone lengths and the bone-variance penalty on the default 13-joint skeleton.

use cmas::eval::{synth_motion, MotionParams};
use cmas::skeleton::{bone_lengths, bone_variance_gradient, bone_variance_loss};
use cmas::SkeletonTopology;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let topo = SkeletonTopology::human13();
    println!("{}", topo.to_json());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let motion = synth_motion(&topo, 24, &mut rng, &MotionParams::default())?;
    for ((p, c), len) in topo.bones().iter().zip(bone_lengths(motion.frame(0), &topo)?) {
        println!("{:>10} -> {:<10} {len:.3} m", topo.names()[*p], topo.names()[*c]);
    }
    println!("rigid motion: bone variance {:.3e}", bone_variance_loss(&motion, &topo)?);

    // stretch the left forearm on odd frames
    let mut wobbly = motion.clone();
    let j = topo.joint_count();
    let wrist = topo.joint_index("l_wrist").expect("default names");
    for f in (1..wobbly.frames()).step_by(2) {
        wobbly.data_mut()[f * j + wrist] += Vector3::new(0.0, -0.05, 0.0);
    }
    let grad = bone_variance_gradient(&wobbly, &topo)?;
    println!(
        "stretched wrist: bone variance {:.3e}, gradient at wrist in frame 1 {:?}",
        bone_variance_loss(&wobbly, &topo)?,
        grad[j + wrist].as_slice()
    );
    Ok(())
}
