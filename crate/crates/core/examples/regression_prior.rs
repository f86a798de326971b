//! Per-step ridge regression denoiser fitted from forward-noised samples.

use cmas::eval::{make_dataset, MotionParams};
use cmas::prior::fit_regression_denoiser;
use cmas::{cosine_schedule, make_rig, RigParams, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let topo = SkeletonTopology::human13();
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = make_dataset(100, &topo, &rig, 4, &mut rng, &MotionParams::default())?;
    let schedule = cosine_schedule(20)?;
    let fit = fit_regression_denoiser(&data.pooled_projections(), &schedule, 1000, &mut rng)?;
    println!("t,train_mse");
    for (t, mse) in fit.train_mse.iter().enumerate() {
        println!("{},{mse:.4e}", t + 1);
    }
    Ok(())
}
