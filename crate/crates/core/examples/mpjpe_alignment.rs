//! MPJPE under the three alignments.

use cmas::eval::{mpjpe, synth_motion, Alignment, MotionParams};
use cmas::SkeletonTopology;
use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let topo = SkeletonTopology::human13();
    let gt = synth_motion(&topo, 32, &mut ChaCha8Rng::seed_from_u64(4), &MotionParams::default())?;

    let shifted = gt.map_points(|p| p + Vector3::new(0.003, 0.004, 0.0));
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.3);
    let similar = gt.map_points(|p| rot * p * 1.1 + Vector3::new(0.2, 0.0, -0.1));

    for (name, pred) in [("3-4-0 mm offset", &shifted), ("similarity transform", &similar)] {
        for a in [Alignment::None, Alignment::Root, Alignment::Procrustes] {
            println!("{name:<22} {a:<10} {:9.4} mm", mpjpe(pred, &gt, a)?);
        }
    }
    Ok(())
}
