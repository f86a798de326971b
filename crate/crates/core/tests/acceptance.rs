//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion reports even when an earlier one
//! fails. Set `CMAS_ACCEPTANCE_STRICT=1` to turn any failure into a non-zero
//! exit status.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cmas::camera::project;
use cmas::diffusion::posterior_sample;
use cmas::eval::{
    make_dataset, mpjpe, run_ablation, synth_motion, AblationCell, Alignment, Benchmark, BenchmarkReport,
    BenchmarkSpec, MotionParams,
};
use cmas::io::pose2d_to_jsonl;
use cmas::preprocess::{
    discontinuities, filter_low_confidence, gaussian_smooth, segment_discontinuities, RawPoseTrack,
};
use cmas::prior::{fit_gaussian_prior, AnalyticDenoiser};
use cmas::skeleton::{bone_variance_gradient, bone_variance_loss};
use cmas::triangulate::{
    geometry_gradient, geometry_loss, total_gradient, total_loss, view_weights, DEFAULT_LAMBDA_BONE,
};
use cmas::{
    cosine_schedule, lift, make_rig, triangulate, CameraRig, CmasConfig, OptimizerSettings, OracleDenoiser,
    Pose2DSequence, Pose3DSequence, RigParams, SkeletonTopology,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = (bool, String);

fn report(id: usize, name: &str, outcome: cmas::Result<Outcome>) -> bool {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("criterion {id:>2} {:<4} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn max_point_error(a: &Pose3DSequence, b: &Pose3DSequence) -> f64 {
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

fn triangulation_recovery() -> cmas::Result<Outcome> {
    let start = Instant::now();
    let topo = SkeletonTopology::human13();
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let weights = view_weights(7, 0.8, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let truth = synth_motion(&topo, 16, &mut rng, &MotionParams::default())?;
        let targets = rig.views().iter().map(|c| project(&truth, c)).collect::<cmas::Result<Vec<_>>>()?;
        let init = truth.map_points(|p| p + Vector3::from_fn(|_, _| noise.sample(&mut rng)));
        let out = triangulate(&targets, &rig, &weights, DEFAULT_LAMBDA_BONE, &topo, &init, &OptimizerSettings::default())?;
        worst = worst.max(max_point_error(&out, &truth));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-3 && secs < 120.0,
        format!("max joint error {worst:.2e} m over 50 motions in {secs:.1} s"),
    ))
}

fn flat_gradient(g: &[Vector3<f64>]) -> Vec<f64> {
    g.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn central_difference(x: &Pose3DSequence, f: &dyn Fn(&Pose3DSequence) -> cmas::Result<f64>) -> cmas::Result<Vec<f64>> {
    let h = 1e-5;
    let mut out = Vec::with_capacity(x.data().len() * 3);
    for i in 0..x.data().len() {
        for c in 0..3 {
            let mut plus = x.clone();
            plus.data_mut()[i][c] += h;
            let mut minus = x.clone();
            minus.data_mut()[i][c] -= h;
            out.push((f(&plus)? - f(&minus)?) / (2.0 * h));
        }
    }
    Ok(out)
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn random_targets(rig: &CameraRig, frames: usize, joints: usize, rng: &mut ChaCha8Rng) -> cmas::Result<Vec<Pose2DSequence>> {
    (0..rig.len())
        .map(|_| {
            let data = (0..frames * joints).map(|_| Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect();
            let seq = Pose2DSequence::new(frames, joints, data)?;
            let mask = (0..frames * joints).map(|_| rng.gen_bool(0.9)).collect();
            seq.with_mask(mask)
        })
        .collect()
}

fn gradient_check() -> cmas::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let frames = rng.gen_range(2..5);
        let joints = rng.gen_range(3..6);
        let bones = (1..joints).map(|c| (rng.gen_range(0..c), c)).collect();
        let topo = SkeletonTopology::new(joints, bones, 0)?;
        let views = rng.gen_range(2..5);
        let rig = make_rig(views, &RigParams::default(), 0)?;
        let weights = view_weights(views, rng.gen_range(0.2..1.0), 0)?;
        let targets = random_targets(&rig, frames, joints, &mut rng)?;
        let data = (0..frames * joints).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.8..0.8))).collect();
        let x = Pose3DSequence::new(frames, joints, data)?;
        let lambda = rng.gen_range(0.5..5.0);

        let g = flat_gradient(&geometry_gradient(&x, &targets, &rig, &weights)?);
        let n = central_difference(&x, &|y| geometry_loss(y, &targets, &rig, &weights))?;
        worst[0] = worst[0].max(relative_error(&g, &n));

        let g = flat_gradient(&bone_variance_gradient(&x, &topo)?);
        let n = central_difference(&x, &|y| bone_variance_loss(y, &topo))?;
        worst[1] = worst[1].max(relative_error(&g, &n));

        let g = flat_gradient(&total_gradient(&x, &targets, &rig, &weights, lambda, &topo)?);
        let n = central_difference(&x, &|y| total_loss(y, &targets, &rig, &weights, lambda, &topo))?;
        worst[2] = worst[2].max(relative_error(&g, &n));
    }
    Ok((
        worst.iter().all(|&e| e <= 1e-4),
        format!(
            "worst relative error geometry {:.1e}, bone {:.1e}, total {:.1e} over 100 instances",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn posterior_check() -> cmas::Result<Outcome> {
    let schedule = cosine_schedule(100)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000usize;
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for _ in 0..5 {
        let t = rng.gen_range(2..=100);
        let x_t = Pose2DSequence::new(1, 1, vec![Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))])?;
        let x0 = Pose2DSequence::new(1, 1, vec![Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))])?;
        let (c_x0, c_xt, var) = schedule.posterior_coefficients(t)?;
        let mu = x0.get(0, 0) * c_x0 + x_t.get(0, 0) * c_xt;
        let mut sum = Vector2::zeros();
        let mut sq = Vector2::zeros();
        for _ in 0..draws {
            let p = posterior_sample(&schedule, &x_t, &x0, t, &mut rng)?.get(0, 0);
            sum += p;
            sq += p.component_mul(&p);
        }
        let n = draws as f64;
        for c in 0..2 {
            let mean = sum[c] / n;
            let sample_var = (sq[c] - n * mean * mean) / (n - 1.0);
            let z_mean = (mean - mu[c]).abs() / (var / n).sqrt();
            let z_var = (sample_var - var).abs() / (var * (2.0 / (n - 1.0)).sqrt());
            worst_z = worst_z.max(z_mean).max(z_var);
            ok &= z_mean <= 3.0 && z_var <= 3.0;
        }
    }
    let x_t = Pose2DSequence::new(2, 2, vec![Vector2::new(0.3, -0.2); 4])?;
    let x0 = Pose2DSequence::new(2, 2, vec![Vector2::new(-0.1, 0.4); 4])?;
    let a = posterior_sample(&schedule, &x_t, &x0, 1, &mut ChaCha8Rng::seed_from_u64(4))?;
    let b = posterior_sample(&schedule, &x_t, &x0, 1, &mut ChaCha8Rng::seed_from_u64(5))?;
    let deterministic = a == b && a.data().iter().all(|p| *p == Vector2::new(-0.1, 0.4));
    Ok((
        ok && deterministic,
        format!("largest deviation {worst_z:.2} standard errors; t=1 deterministic: {deterministic}"),
    ))
}

fn oracle_lift() -> cmas::Result<Outcome> {
    let config = CmasConfig::default();
    let rig = config.make_rig()?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let truth = synth_motion(&config.topology, 16, &mut rng, &MotionParams::default())?;
        let input = project(&truth, rig.reference())?;
        let oracle = OracleDenoiser::new(&truth, &rig)?;
        let cfg = CmasConfig { seed: i, ..config.clone() };
        let out = lift(&input, &oracle, &cfg)?;
        worst = worst.max(mpjpe(&out.motion, &truth, Alignment::None)?);
    }
    Ok((worst < 1.0, format!("worst MPJPE {worst:.2e} mm over 20 sequences")))
}

const BENCH_ITERATIONS: usize = 200;

struct BenchmarkResults {
    uniform: BenchmarkReport,
    weighted: BenchmarkReport,
    weighted_no_bone: BenchmarkReport,
    reference_only: BenchmarkReport,
    three_views: BenchmarkReport,
    seconds: f64,
}

fn run_benchmark() -> cmas::Result<BenchmarkResults> {
    let start = Instant::now();
    let topo = SkeletonTopology::human13();
    let frames = 16;
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let train = make_dataset(1000, &topo, &rig, frames, &mut ChaCha8Rng::seed_from_u64(1001), &MotionParams::default())?;
    let denoiser = AnalyticDenoiser::new(fit_gaussian_prior(&train.pooled_projections())?, cosine_schedule(100)?);
    let bench = Benchmark::synthetic(
        &BenchmarkSpec {
            sequences: 200,
            frames,
            input_noise: 0.005,
            ..BenchmarkSpec::default()
        },
        &topo,
    )?;
    let base = CmasConfig {
        optimizer: OptimizerSettings {
            iterations: BENCH_ITERATIONS,
            ..OptimizerSettings::default()
        },
        ..CmasConfig::default()
    };
    let grid = [
        AblationCell::new("uniform", 7, 1.0 / 7.0, DEFAULT_LAMBDA_BONE),
        AblationCell::new("weighted", 7, 0.8, DEFAULT_LAMBDA_BONE),
        AblationCell::new("weighted-no-bone", 7, 0.8, 0.0),
        AblationCell::new("reference-only", 7, 1.0, DEFAULT_LAMBDA_BONE),
        AblationCell::new("three-views", 3, 0.8, DEFAULT_LAMBDA_BONE),
    ];
    let reports = run_ablation(&grid, &bench, &denoiser, &base)?;
    let take = |label: &str| {
        reports
            .iter()
            .find(|r| r.cell.label == label)
            .cloned()
            .ok_or_else(|| cmas::Error::Config(format!("missing report {label}")))
    };
    for r in &reports {
        println!(
            "    {:<18} V={} w_ref={:.3} lambda={:.0e}: mpjpe root {:.2} mm, bone variance {:.3e}",
            r.cell.label,
            r.cell.views,
            r.cell.w_ref,
            r.cell.lambda_bone,
            r.mean(Alignment::Root),
            r.mean_bone_variance()
        );
    }
    Ok(BenchmarkResults {
        uniform: take("uniform")?,
        weighted: take("weighted")?,
        weighted_no_bone: take("weighted-no-bone")?,
        reference_only: take("reference-only")?,
        three_views: take("three-views")?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn weight_ordering(b: &BenchmarkResults) -> Outcome {
    let (w, u, r) = (
        b.weighted.mean(Alignment::Root),
        b.uniform.mean(Alignment::Root),
        b.reference_only.mean(Alignment::Root),
    );
    (
        w < u && w < r && b.seconds < 1800.0,
        format!("w_ref=4/5 {w:.2} mm, 1/7 {u:.2} mm, 1 {r:.2} mm; benchmark took {:.0} s", b.seconds),
    )
}

fn bone_effect(b: &BenchmarkResults) -> Outcome {
    let (with, without) = (b.weighted.mean_bone_variance(), b.weighted_no_bone.mean_bone_variance());
    let reduction = 1.0 - with / without;
    let (m_with, m_without) = (b.weighted.mean(Alignment::Root), b.weighted_no_bone.mean(Alignment::Root));
    let increase = m_with / m_without - 1.0;
    (
        reduction >= 0.5 && increase <= 0.05,
        format!(
            "bone variance {without:.3e} -> {with:.3e} ({:.1}% reduction), MPJPE {m_without:.2} -> {m_with:.2} mm ({:+.2}%)",
            100.0 * reduction,
            100.0 * increase
        ),
    )
}

fn view_ordering(b: &BenchmarkResults) -> Outcome {
    let (seven, three) = (b.weighted.mean(Alignment::Root), b.three_views.mean(Alignment::Root));
    (seven <= three, format!("V=7 {seven:.2} mm, V=3 {three:.2} mm"))
}

fn weight_formula() -> cmas::Result<Outcome> {
    let w = view_weights(7, 4.0 / 5.0, 0)?;
    let values = w.values();
    let sum: f64 = values.iter().sum();
    let reference = values[0] == 0.8;
    let others = values[1..].iter().all(|&a| (a - 1.0 / 30.0).abs() <= 4.0 * f64::EPSILON / 30.0);
    Ok((
        sum == 1.0 && reference && others && values.len() == 7,
        format!("sum {sum:?}, values {values:?}"),
    ))
}

fn constant_track(frames: usize, joints: usize, confidence: f64) -> cmas::Result<RawPoseTrack> {
    let coords = (0..frames * joints).map(|i| Vector2::new(0.1 * (i % joints) as f64, -0.05)).collect();
    RawPoseTrack::new(frames, joints, coords, vec![confidence; frames * joints])
}

fn preprocessing_fixtures() -> cmas::Result<Outcome> {
    let mut notes = Vec::new();

    let confidences = vec![0.0, 0.29, 0.2999999, 0.3, 0.31, 1.0];
    let coords = vec![Vector2::zeros(); confidences.len()];
    let track = RawPoseTrack::new(1, confidences.len(), coords, confidences)?;
    let filtered = filter_low_confidence(&track, 0.3);
    let masking = filtered.mask() == [false, false, false, true, true, true];
    notes.push(format!("masking {}", if masking { "ok" } else { "wrong" }));

    let joints = 3;
    let mut frames = Vec::new();
    for f in 0..10 {
        let shift = if f >= 7 { 2.0 } else if f >= 4 { 1.0 } else { 0.0 };
        frames.push((0..joints).map(|j| Vector2::new(shift + 0.01 * f as f64, 0.1 * j as f64)).collect());
    }
    let track = RawPoseTrack::from_frames(frames)?;
    let cuts = discontinuities(&track, 0.5);
    let segments = segment_discontinuities(&track, 0.5);
    let lengths: Vec<usize> = segments.iter().map(RawPoseTrack::frames).collect();
    let starts: Vec<usize> = segments.iter().map(|s| s.start_frame).collect();
    let mut borderline = track.clone();
    for f in 0..10 {
        for j in 0..joints {
            let p = Vector2::new(0.5 * (f >= 5) as u8 as f64, 0.1 * j as f64);
            borderline = replace(borderline, f, j, p)?;
        }
    }
    let segmentation = cuts == [4, 7]
        && lengths == [4, 3, 3]
        && starts == [0, 4, 7]
        && discontinuities(&borderline, 0.5).is_empty();
    notes.push(format!("segmentation cuts {cuts:?} lengths {lengths:?}"));

    let constant = constant_track(12, 4, 1.0)?;
    let mut smoothing = true;
    for sigma in [0.5, 1.0, 2.0, 5.0] {
        let s = gaussian_smooth(&constant, sigma);
        smoothing &= s.coords().iter().zip(constant.coords()).all(|(a, b)| (a - b).norm() <= 1e-12);
    }
    notes.push(format!("smoothing identity {}", if smoothing { "ok" } else { "wrong" }));

    Ok((masking && segmentation && smoothing, notes.join(", ")))
}

fn replace(track: RawPoseTrack, frame: usize, joint: usize, p: Vector2<f64>) -> cmas::Result<RawPoseTrack> {
    let mut coords = track.coords().to_vec();
    coords[frame * track.joints() + joint] = p;
    RawPoseTrack::new(track.frames(), track.joints(), coords, track.confidence().to_vec())
}

fn run_cli(args: &[&str]) -> cmas::Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_cmas"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()?;
    if status.success() {
        Ok(())
    } else {
        Err(cmas::Error::Config(format!("cmas {} exited with {status}", args.join(" "))))
    }
}

fn cli_determinism() -> cmas::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_cli(&["synth", "-n", "60", "--length", "8", "--out", &p("data")])?;
    run_cli(&["fit-prior", "--dataset", &p("data"), "--out", &p("model.bin")])?;

    let topo = SkeletonTopology::human13();
    let rig = make_rig(7, &RigParams::default(), 0)?;
    let truth = synth_motion(&topo, 8, &mut ChaCha8Rng::seed_from_u64(10), &MotionParams::default())?;
    std::fs::write(p("input.jsonl"), pose2d_to_jsonl(&project(&truth, rig.reference())?))?;

    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4", "8", "1", "4", "8"].iter().enumerate() {
        let out = p(&format!("out{k}.jsonl"));
        run_cli(&[
            "lift", "--input", &p("input.jsonl"), "--raw", "--model", &p("model.bin"), "--iters", "50", "--seed",
            "42", "--threads", threads, "--out", &out,
        ])?;
        outputs.push(std::fs::read(Path::new(&out))?);
    }
    let identical = outputs.iter().all(|o| *o == outputs[0]) && !outputs[0].is_empty();

    let other = p("other.jsonl");
    run_cli(&[
        "lift", "--input", &p("input.jsonl"), "--raw", "--model", &p("model.bin"), "--iters", "50", "--seed", "43",
        "--out", &other,
    ])?;
    let seed_matters = std::fs::read(Path::new(&other))? != outputs[0];
    Ok((
        identical,
        format!(
            "6 runs over threads {{1, 4, 8}} byte-identical: {identical} ({} bytes); a different seed changes the output: {seed_matters}",
            outputs[0].len()
        ),
    ))
}

fn main() {
    let mut results = vec![
        report(1, "triangulation exact recovery", triangulation_recovery()),
        report(2, "gradient correctness", gradient_check()),
        report(3, "posterior sampling", posterior_check()),
        report(4, "oracle end-to-end", oracle_lift()),
    ];
    match run_benchmark() {
        Ok(b) => {
            results.push(report(5, "reference-weight directionality", Ok(weight_ordering(&b))));
            results.push(report(6, "bone-loss directionality", Ok(bone_effect(&b))));
            results.push(report(7, "view-count directionality", Ok(view_ordering(&b))));
        }
        Err(e) => {
            let message = e.to_string();
            for (id, name) in [(5, "reference-weight directionality"), (6, "bone-loss directionality"), (7, "view-count directionality")] {
                results.push(report(id, name, Ok((false, format!("error: {message}")))));
            }
        }
    }
    results.push(report(8, "weight formula", weight_formula()));
    results.push(report(9, "preprocessing conformance", preprocessing_fixtures()));
    results.push(report(10, "determinism", cli_determinism()));

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed < results.len() && std::env::var("CMAS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
