//! A small version of the view-count, loss-component and weight sweeps.
//!
//! `cargo run --release --example ablation -- [sequences] [iterations]`

use cmas::eval::{
    default_grid, make_dataset, reports_csv, run_ablation, Alignment, Benchmark, BenchmarkSpec, MotionParams,
};
use cmas::prior::{fit_gaussian_prior, AnalyticDenoiser};
use cmas::{cosine_schedule, make_rig, CmasConfig, OptimizerSettings, RigParams, SkeletonTopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmas::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let sequences: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);

    let topo = SkeletonTopology::human13();
    let frames = 16;
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let train = make_dataset(500, &topo, &rig, frames, &mut ChaCha8Rng::seed_from_u64(77), &MotionParams::default())?;
    let denoiser = AnalyticDenoiser::new(fit_gaussian_prior(&train.pooled_projections())?, cosine_schedule(100)?);

    let bench = Benchmark::synthetic(
        &BenchmarkSpec {
            sequences,
            frames,
            ..BenchmarkSpec::default()
        },
        &topo,
    )?;
    let base = CmasConfig {
        optimizer: OptimizerSettings {
            iterations,
            ..OptimizerSettings::default()
        },
        ..CmasConfig::default()
    };
    let reports = run_ablation(&default_grid(), &bench, &denoiser, &base)?;
    for r in &reports {
        println!("{:<34} {:8.2} mm", r.cell.label, r.mean(Alignment::Root));
    }
    print!("{}", reports_csv(&reports)?);
    Ok(())
}
