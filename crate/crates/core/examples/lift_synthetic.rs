//! Lift noisy synthetic inputs with the analytic Gaussian denoiser and compare
//! against constant-depth backprojection.
//!
//! `cargo run --release --example lift_synthetic -- [sequences] [iterations]`

use cmas::eval::{baseline_lift, make_dataset, mpjpe, Alignment, Benchmark, BenchmarkSpec, MotionParams};
use cmas::prior::{fit_gaussian_prior, AnalyticDenoiser};
use cmas::{cosine_schedule, lift, CmasConfig, OptimizerSettings, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    let mut args = std::env::args().skip(1);
    let sequences: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let topo = SkeletonTopology::human13();
    let config = CmasConfig {
        optimizer: OptimizerSettings {
            iterations,
            ..OptimizerSettings::default()
        },
        ..CmasConfig::default()
    };
    let rig = config.make_rig()?;
    let frames = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let train = make_dataset(1000, &topo, &rig, frames, &mut rng, &MotionParams::default())?;
    let prior = fit_gaussian_prior(&train.pooled_projections())?;
    let denoiser = AnalyticDenoiser::new(prior, cosine_schedule(config.steps)?);

    let spec = BenchmarkSpec {
        sequences,
        frames,
        ..BenchmarkSpec::default()
    };
    let bench = Benchmark::synthetic(&spec, &topo)?;
    let (mut ours, mut base) = (0.0, 0.0);
    for (i, (gt, input)) in bench.motions.iter().zip(&bench.inputs).enumerate() {
        let out = lift(input, &denoiser, &CmasConfig { seed: i as u64, ..config.clone() })?;
        let a = mpjpe(&out.motion, gt, Alignment::Root)?;
        let b = mpjpe(&baseline_lift(input, rig.reference(), config.rig.distance)?, gt, Alignment::Root)?;
        println!("sequence {i}: cMAS {a:7.2} mm   constant depth {b:7.2} mm");
        ours += a;
        base += b;
    }
    let n = bench.len() as f64;
    println!("mean: cMAS {:.2} mm, constant depth {:.2} mm", ours / n, base / n);
    Ok(())
}
