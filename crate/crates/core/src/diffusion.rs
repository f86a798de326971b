//! DDPM machinery over 2D motions: cosine schedule, forward noising and the
//! posterior `q(x_{t-1} | x_t, x_0)`.
//!
//! Steps are indexed `1..=T` in every public function. `alpha_bar(0)` is 1.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::skeleton::Pose2DSequence;
use crate::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Predicts the clean motion `x_0` from a noisy latent `x_t`.
///
/// Implementations are deterministic in their inputs and shareable across threads.
pub trait Denoiser: Send + Sync {
    fn predict_clean(&self, x_t: &Pose2DSequence, t: usize, view: usize) -> Result<Pose2DSequence>;

    /// `(frames, joints)` the model was built for, if it is shape-bound.
    fn shape(&self) -> Option<(usize, usize)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    // alpha_bar[0] = 1, alpha_bar[t] for t in 1..=T
    alpha_bar: Vec<f64>,
}

/// Improved-DDPM cosine schedule with offset 0.008 and betas clipped at 0.999.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Domain("schedule needs at least one step".into()));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let betas: Vec<f64> = (1..=steps)
        .map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, MAX_BETA))
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for b in &betas {
        let prev = *alpha_bar.last().unwrap();
        alpha_bar.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule { betas, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain(format!(
                "step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative signal coefficient; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean and the posterior variance.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let c_xt = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        Ok((c_x0, c_xt, var))
    }
}

fn check_same_shape(a: &Pose2DSequence, b: &Pose2DSequence) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.frames(),
            a.joints(),
            b.frames(),
            b.joints()
        )));
    }
    Ok(())
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_sample(
    schedule: &NoiseSchedule,
    x0: &Pose2DSequence,
    t: usize,
    eps: &Pose2DSequence,
) -> Result<Pose2DSequence> {
    schedule.check_step(t)?;
    check_same_shape(x0, eps)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| x * a + e * b)
        .collect();
    Pose2DSequence::new(x0.frames(), x0.joints(), data)
}

/// Draws `x_{t-1}` from the DDPM posterior given `x_t` and a clean estimate.
pub fn posterior_sample<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x_t: &Pose2DSequence,
    x0_hat: &Pose2DSequence,
    t: usize,
    rng: &mut R,
) -> Result<Pose2DSequence> {
    check_same_shape(x_t, x0_hat)?;
    let (c_x0, c_xt, var) = schedule.posterior_coefficients(t)?;
    let std = var.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(x0_hat.data())
        .map(|(xt, x0)| {
            let mean = x0 * c_x0 + xt * c_xt;
            if std > 0.0 {
                let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                mean + z * std
            } else {
                mean
            }
        })
        .collect();
    Pose2DSequence::new(x_t.frames(), x_t.joints(), data)
}
