//! Fit a Gaussian motion prior to synthetic 2D projections and denoise with it.

use cmas::diffusion::{forward_sample, Denoiser};
use cmas::eval::{make_dataset, MotionParams};
use cmas::prior::{fit_gaussian_prior, AnalyticDenoiser};
use cmas::{cosine_schedule, make_rig, Pose2DSequence, RigParams, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn mse(a: &Pose2DSequence, b: &Pose2DSequence) -> f64 {
    let (a, b) = (a.to_flat(), b.to_flat());
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn main() -> cmas::Result<()> {
    let topo = SkeletonTopology::human13();
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train = make_dataset(300, &topo, &rig, 16, &mut rng, &MotionParams::default())?;
    let prior = fit_gaussian_prior(&train.pooled_projections())?;
    println!("prior dimension {} from {} sequences", prior.dim(), 300 * rig.len());

    let schedule = cosine_schedule(100)?;
    let denoiser = AnalyticDenoiser::new(prior, schedule.clone());
    let test = make_dataset(1, &topo, &rig, 16, &mut rng, &MotionParams::default())?;
    let x0 = &test.views[2][0];
    for t in [5, 20, 50, 80, 100] {
        let noise: Vec<f64> = (0..x0.to_flat().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps = Pose2DSequence::from_flat(x0.frames(), x0.joints(), &noise)?;
        let xt = forward_sample(&schedule, x0, t, &eps)?;
        let x0_hat = denoiser.predict_clean(&xt, t, 2)?;
        println!("t={t:>3}: mse(x_t, x0) {:.2e}  mse(x0_hat, x0) {:.2e}", mse(&xt, x0), mse(&x0_hat, x0));
    }
    Ok(())
}
