//! cMAS with a denoiser that knows the answer: the sampler should return the
//! ground-truth motion.

use cmas::camera::project;
use cmas::eval::{mpjpe, synth_motion, Alignment, MotionParams};
use cmas::{lift, CmasConfig, OptimizerSettings, OracleDenoiser, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let config = CmasConfig {
        optimizer: OptimizerSettings {
            iterations: 200,
            ..OptimizerSettings::default()
        },
        ..CmasConfig::default()
    };
    let rig = config.make_rig()?;
    let topo = SkeletonTopology::human13();
    let truth = synth_motion(&topo, 16, &mut ChaCha8Rng::seed_from_u64(9), &MotionParams::default())?;
    let input = project(&truth, rig.reference())?;
    let oracle = OracleDenoiser::new(&truth, &rig)?;

    let out = lift(&input, &oracle, &config)?;
    for d in out.diagnostics.iter().step_by(20) {
        println!("t={:>3} loss {:.3e} ref_err {:.3e} bone_var {:.3e}", d.t, d.loss, d.ref_err, d.bone_var);
    }
    println!("MPJPE {:.4} mm", mpjpe(&out.motion, &truth, Alignment::None)?);
    Ok(())
}
