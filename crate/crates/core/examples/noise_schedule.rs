//! Cosine schedule, forward noising and one reverse posterior draw.

use cmas::diffusion::{forward_sample, posterior_sample};
use cmas::{cosine_schedule, Pose2DSequence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let schedule = cosine_schedule(100)?;
    for t in [1, 10, 25, 50, 75, 100] {
        let (c0, ct, var) = schedule.posterior_coefficients(t)?;
        println!(
            "t={t:>3} beta={:.5} alpha_bar={:.5} posterior: {c0:.4} x0 + {ct:.4} xt, var {var:.3e}",
            schedule.beta(t),
            schedule.alpha_bar(t)
        );
    }

    let x0 = Pose2DSequence::from_flat(1, 2, &[0.1, -0.2, 0.05, 0.3])?;
    let eps = Pose2DSequence::from_flat(1, 2, &[1.0, -0.5, 0.2, 0.0])?;
    let xt = forward_sample(&schedule, &x0, 50, &eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let prev = posterior_sample(&schedule, &xt, &x0, 50, &mut rng)?;
    println!("x_50 = {:?}\nx_49 = {:?}", xt.to_flat(), prev.to_flat());
    Ok(())
}
