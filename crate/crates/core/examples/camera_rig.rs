//! The orbiting virtual rig: projection, backprojection and noise projection.

use cmas::camera::{project, project_noise};
use cmas::eval::{synth_motion, MotionParams};
use cmas::{make_rig, RigParams, SkeletonTopology};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> cmas::Result<()> {
    let rig = make_rig(7, &RigParams::default(), 0)?;
    for (v, cam) in rig.views().iter().enumerate() {
        let c = cam.center();
        println!("view {v}: center ({:+.3}, {:+.3}, {:+.3}) focal {}", c.x, c.y, c.z, cam.focal());
    }

    let topo = SkeletonTopology::human13();
    let motion = synth_motion(&topo, 4, &mut ChaCha8Rng::seed_from_u64(1), &MotionParams::default())?;
    for (v, cam) in rig.views().iter().enumerate().take(3) {
        let uv = project(&motion, cam)?;
        let head = uv.get(0, 2);
        println!("view {v}: head of frame 0 at ({:+.4}, {:+.4})", head.x, head.y);
    }

    let cam = rig.reference();
    let ray_point = cam.backproject(&project(&motion, cam)?.get(0, 5), 6.5);
    println!("left wrist pushed along its ray to depth 6.5: {:?}", ray_point.as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps: Vec<Vector3<f64>> = (0..10_000)
        .map(|_| Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let proj = project_noise(&eps, rig.view(3));
    let var_u = proj.iter().map(|p| p.x * p.x).sum::<f64>() / proj.len() as f64;
    println!("projected noise variance in view 3: {var_u:.3}");

    println!("{}", rig.to_json());
    Ok(())
}
