//! Desk-scale denoisers over flattened `L x J x 2` motions.
//!
//! [`GaussianMotionPrior`] gives the exact posterior mean `E[x0 | x_t]` for a
//! Gaussian data distribution. [`RegressionDenoiser`] is a per-step affine map
//! fitted by ridge regression on forward-noised samples.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::skeleton::Pose2DSequence;
use crate::{Error, Result};

pub const RIDGE: f64 = 1e-4;
const JITTER_SCALE: f64 = 1e-6;

fn common_shape(dataset: &[Pose2DSequence]) -> Result<(usize, usize)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Domain("empty dataset".into()))?;
    if let Some(bad) = dataset.iter().find(|s| !s.same_shape(first)) {
        return Err(Error::Shape(format!(
            "dataset mixes {}x{} and {}x{} sequences",
            first.frames(),
            first.joints(),
            bad.frames(),
            bad.joints()
        )));
    }
    Ok((first.frames(), first.joints()))
}

fn check_input(x: &Pose2DSequence, shape: (usize, usize)) -> Result<()> {
    if (x.frames(), x.joints()) != shape {
        return Err(Error::Shape(format!(
            "input {}x{} but model expects {}x{}",
            x.frames(),
            x.joints(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Gaussian distribution over flattened 2D motions.
#[derive(Debug, Clone)]
pub struct GaussianMotionPrior {
    frames: usize,
    joints: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl GaussianMotionPrior {
    /// Builds a prior from an explicit mean and covariance. The covariance
    /// must be symmetric and positive semidefinite (eigenvalues >= -1e-9).
    pub fn from_moments(
        frames: usize,
        joints: usize,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let d = frames * joints * 2;
        if d == 0 || mean.len() != d || covariance.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "prior for {frames}x{joints} needs a {d}-vector and {d}x{d} covariance"
            )));
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::Numerical(format!("covariance asymmetric by {asym:e}")));
        }
        let eig = SymmetricEigen::new(covariance.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-9 {
            return Err(Error::Numerical(format!(
                "covariance has negative eigenvalue {min:e}"
            )));
        }
        Ok(Self {
            frames,
            joints,
            mean,
            eigenvalues: eig.eigenvalues.map(|v| v.max(0.0)),
            eigenvectors: eig.eigenvectors,
            covariance,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.joints)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Posterior-mean gains along each covariance eigenvector at step `t`.
    fn gains(&self, alpha_bar: f64) -> DVector<f64> {
        let s = alpha_bar.sqrt();
        self.eigenvalues.map(|lam| {
            if lam <= 0.0 {
                0.0
            } else {
                s * lam / (alpha_bar * lam + (1.0 - alpha_bar))
            }
        })
    }

    fn apply(&self, x_t: &Pose2DSequence, alpha_bar: f64, gains: &DVector<f64>) -> Result<Pose2DSequence> {
        check_input(x_t, self.shape())?;
        let x = DVector::from_vec(x_t.to_flat());
        let centered = x - &self.mean * alpha_bar.sqrt();
        let mut coeffs = self.eigenvectors.tr_mul(&centered);
        coeffs.component_mul_assign(gains);
        let out = &self.mean + &self.eigenvectors * coeffs;
        Pose2DSequence::from_flat(self.frames, self.joints, out.as_slice())
    }

    /// Samples a motion from the prior.
    pub fn sample(&self, rng: &mut impl Rng) -> Pose2DSequence {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let scaled = z.zip_map(&self.eigenvalues, |zi, lam| zi * lam.sqrt());
        let x = &self.mean + &self.eigenvectors * scaled;
        Pose2DSequence::from_flat(self.frames, self.joints, x.as_slice()).expect("finite sample")
    }
}

/// Empirical mean and covariance (divisor N) with `1e-6 * trace / D` added to the diagonal.
pub fn fit_gaussian_prior(dataset: &[Pose2DSequence]) -> Result<GaussianMotionPrior> {
    let (frames, joints) = common_shape(dataset)?;
    if dataset.len() < 2 {
        return Err(Error::Domain("Gaussian prior needs at least two sequences".into()));
    }
    let n = dataset.len();
    let d = frames * joints * 2;
    let samples = DMatrix::from_fn(d, n, |r, c| {
        let p = dataset[c].data()[r / 2];
        p[r % 2]
    });
    let mean = samples.column_mean();
    let mut centered = samples;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut covariance = (&centered * centered.transpose()) / n as f64;
    // symmetrize away rounding
    covariance = (&covariance + covariance.transpose()) * 0.5;
    let jitter = JITTER_SCALE * covariance.trace() / d as f64;
    for i in 0..d {
        covariance[(i, i)] += jitter;
    }
    GaussianMotionPrior::from_moments(frames, joints, mean, covariance)
}

/// `mu + sqrt(ab) S (ab S + (1 - ab) I)^-1 (x_t - sqrt(ab) mu)` for the prior `N(mu, S)`.
pub fn analytic_denoise(
    prior: &GaussianMotionPrior,
    x_t: &Pose2DSequence,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Pose2DSequence> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    prior.apply(x_t, ab, &prior.gains(ab))
}

/// [`Denoiser`] backed by a Gaussian prior. Per-step gains are computed on
/// first use and cached.
#[derive(Debug)]
pub struct AnalyticDenoiser {
    prior: GaussianMotionPrior,
    schedule: NoiseSchedule,
    gains: Vec<OnceLock<DVector<f64>>>,
}

impl AnalyticDenoiser {
    pub fn new(prior: GaussianMotionPrior, schedule: NoiseSchedule) -> Self {
        let gains = (0..schedule.steps()).map(|_| OnceLock::new()).collect();
        Self {
            prior,
            schedule,
            gains,
        }
    }

    pub fn prior(&self) -> &GaussianMotionPrior {
        &self.prior
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict_clean(&self, x_t: &Pose2DSequence, t: usize, _view: usize) -> Result<Pose2DSequence> {
        self.schedule.check_step(t)?;
        let ab = self.schedule.alpha_bar(t);
        let gains = self.gains[t - 1].get_or_init(|| self.prior.gains(ab));
        self.prior.apply(x_t, ab, gains)
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some(self.prior.shape())
    }
}

/// Per-step affine maps `x0_hat = A_t x_t + b_t`.
#[derive(Debug, Clone)]
pub struct RegressionDenoiser {
    frames: usize,
    joints: usize,
    maps: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl RegressionDenoiser {
    pub fn from_maps(
        frames: usize,
        joints: usize,
        maps: Vec<(DMatrix<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        let d = frames * joints * 2;
        if maps.is_empty() {
            return Err(Error::Domain("regression denoiser needs at least one step".into()));
        }
        if maps.iter().any(|(a, b)| a.shape() != (d, d) || b.len() != d) {
            return Err(Error::Shape(format!("affine maps must be {d}x{d} and {d}")));
        }
        Ok(Self {
            frames,
            joints,
            maps,
        })
    }

    pub fn steps(&self) -> usize {
        self.maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.joints)
    }

    pub fn map(&self, t: usize) -> &(DMatrix<f64>, DVector<f64>) {
        &self.maps[t - 1]
    }

    pub fn maps(&self) -> &[(DMatrix<f64>, DVector<f64>)] {
        &self.maps
    }
}

/// Applies the affine map stored for step `t`.
pub fn regression_denoise(
    model: &RegressionDenoiser,
    x_t: &Pose2DSequence,
    t: usize,
) -> Result<Pose2DSequence> {
    if t == 0 || t > model.steps() {
        return Err(Error::Domain(format!("step {t} outside [1, {}]", model.steps())));
    }
    check_input(x_t, model.shape())?;
    let (a, b) = model.map(t);
    let out = a * DVector::from_vec(x_t.to_flat()) + b;
    Pose2DSequence::from_flat(model.frames, model.joints, out.as_slice())
}

impl Denoiser for RegressionDenoiser {
    fn predict_clean(&self, x_t: &Pose2DSequence, t: usize, _view: usize) -> Result<Pose2DSequence> {
        regression_denoise(self, x_t, t)
    }

    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.frames, self.joints))
    }
}

/// Per-step mean squared training error reported by [`fit_regression_denoiser`].
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub model: RegressionDenoiser,
    pub train_mse: Vec<f64>,
}

/// Fits one ridge regression per step from `x_t` to `x0`, using
/// `samples_per_t` forward-noised draws from the dataset.
pub fn fit_regression_denoiser(
    dataset: &[Pose2DSequence],
    schedule: &NoiseSchedule,
    samples_per_t: usize,
    rng: &mut impl Rng,
) -> Result<RegressionFit> {
    let (frames, joints) = common_shape(dataset)?;
    if samples_per_t == 0 {
        return Err(Error::Domain("samples_per_t must be positive".into()));
    }
    let d = frames * joints * 2;
    let flats: Vec<Vec<f64>> = dataset.iter().map(Pose2DSequence::to_flat).collect();
    let base: u64 = rng.gen();

    let fitted: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (1..=schedule.steps())
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(t as u64);
            let ab = schedule.alpha_bar(t);
            let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
            let n = samples_per_t;
            let mut xs = DMatrix::zeros(d, n);
            let mut ys = DMatrix::zeros(d, n);
            for c in 0..n {
                let x0 = &flats[rng.gen_range(0..flats.len())];
                for r in 0..d {
                    let e: f64 = rng.sample(StandardNormal);
                    ys[(r, c)] = x0[r];
                    xs[(r, c)] = sa * x0[r] + sn * e;
                }
            }
            fit_ridge(&xs, &ys)
        })
        .collect::<Result<Vec<_>>>()?;

    let train_mse = fitted.iter().map(|f| f.2).collect();
    let maps = fitted.into_iter().map(|(a, b, _)| (a, b)).collect();
    Ok(RegressionFit {
        model: RegressionDenoiser::from_maps(frames, joints, maps)?,
        train_mse,
    })
}

/// Ridge regression with intercept on column samples; returns `(A, b, mse)`.
fn fit_ridge(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let (d, n) = xs.shape();
    let x_mean = xs.column_mean();
    let y_mean = ys.column_mean();
    let mut xc = xs.clone();
    let mut yc = ys.clone();
    for mut col in xc.column_iter_mut() {
        col -= &x_mean;
    }
    for mut col in yc.column_iter_mut() {
        col -= &y_mean;
    }
    let nf = n as f64;
    let mut gram = (&xc * xc.transpose()) / nf;
    for i in 0..d {
        gram[(i, i)] += RIDGE;
    }
    let cross = (&xc * yc.transpose()) / nf; // d x d, X Y^T
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge system not positive definite".into()))?;
    let a = chol.solve(&cross).transpose();
    let b = &y_mean - &a * &x_mean;
    let pred = &a * xs;
    let mut sq = 0.0;
    for c in 0..n {
        sq += (pred.column(c) + &b - ys.column(c)).norm_squared();
    }
    Ok((a, b, sq / (nf * d as f64)))
}
