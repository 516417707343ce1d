use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{DisplacementGrid, UvAtlas, UvMask};

use super::schedule::{DdimPlan, VarianceSchedule};
use super::{Denoiser, DiffusionError};

/// i.i.d. standard normal values on masked pixels, zero elsewhere.
pub fn sample_noise<R: Rng + ?Sized>(mask: &Arc<UvMask>, rng: &mut R) -> DisplacementGrid {
    let mut g = DisplacementGrid::zeros(mask.clone());
    for &(x, y) in mask.pixels().to_vec().iter() {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        g.set(x, y, v);
    }
    g
}

/// Closed-form marginal of the forward chain:
/// x_t = sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·eps.
pub fn forward_diffuse(
    sched: &VarianceSchedule,
    x0: &DisplacementGrid,
    t: usize,
    eps: &DisplacementGrid,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    Ok(x0.lin_comb(ab.sqrt(), eps, (1.0 - ab).sqrt())?)
}

/// One forward step: x_t = sqrt(1−β_t)·x_{t−1} + sqrt(β_t)·z.
pub fn forward_step(
    sched: &VarianceSchedule,
    x_prev: &DisplacementGrid,
    t: usize,
    z: &DisplacementGrid,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let beta = sched.beta(t);
    Ok(x_prev.lin_comb((1.0 - beta).sqrt(), z, beta.sqrt())?)
}

/// Posterior mean of the clean state given x_t and a noise estimate:
/// x̂0 = x_t/sqrt(ᾱ_t) − sqrt((1−ᾱ_t)/ᾱ_t)·eps_hat.
pub fn posterior_mean_x0(
    sched: &VarianceSchedule,
    x_t: &DisplacementGrid,
    t: usize,
    eps_hat: &DisplacementGrid,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    Ok(x_t.lin_comb(1.0 / ab.sqrt(), eps_hat, -((1.0 - ab) / ab).sqrt())?)
}

/// One ancestral (stochastic reverse) step from x_t to x_{t−1}:
/// (1/sqrt(α_t))·(x_t − ((1−α_t)/sqrt(1−ᾱ_t))·ε̂) + σ_t·z.
///
/// `z` must be standard normal on the mask for t > 1; it is ignored at t = 1
/// where σ_1 = 0.
pub fn ancestral_step(
    sched: &VarianceSchedule,
    denoiser: &dyn Denoiser,
    x_t: &DisplacementGrid,
    t: usize,
    z: &DisplacementGrid,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let eps_hat = denoiser.predict_noise(x_t, t)?;
    ancestral_update(sched, x_t, t, &eps_hat, z)
}

/// The ancestral update with a precomputed noise estimate; the math behind
/// [`ancestral_step`], split out so callers that also need ε̂ elsewhere
/// evaluate the denoiser once.
pub fn ancestral_update(
    sched: &VarianceSchedule,
    x_t: &DisplacementGrid,
    t: usize,
    eps_hat: &DisplacementGrid,
    z: &DisplacementGrid,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let mut out = x_t.lin_comb(1.0 / alpha.sqrt(), eps_hat, -coef / alpha.sqrt())?;
    if t > 1 {
        out.axpy_in_place(sched.sigma(t), z)?;
    }
    Ok(out)
}

/// One skip (DDIM) step from x_t to x_{t_prev}, t_prev < t:
/// x_{t_prev} = sqrt(ᾱ_{t_prev})·x̂0 + sqrt(1−ᾱ_{t_prev}−σ̃²)·ε̂ + σ̃·z,
/// σ̃ = eta·sqrt(((1−ᾱ_{t_prev})/(1−ᾱ_t))·(1−ᾱ_t/ᾱ_{t_prev})).
///
/// eta = 0 is deterministic and needs no noise grid; t_prev = 0 lands on x̂0
/// regardless of eta.
pub fn ddim_step(
    sched: &VarianceSchedule,
    denoiser: &dyn Denoiser,
    x_t: &DisplacementGrid,
    t: usize,
    t_prev: usize,
    eta: f64,
    z: Option<&DisplacementGrid>,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    let eps_hat = denoiser.predict_noise(x_t, t)?;
    ddim_update(sched, x_t, t, t_prev, &eps_hat, eta, z)
}

/// The skip update with a precomputed noise estimate; the math behind
/// [`ddim_step`].
pub fn ddim_update(
    sched: &VarianceSchedule,
    x_t: &DisplacementGrid,
    t: usize,
    t_prev: usize,
    eps_hat: &DisplacementGrid,
    eta: f64,
    z: Option<&DisplacementGrid>,
) -> Result<DisplacementGrid, DiffusionError> {
    sched.check_t(t)?;
    if t_prev >= t {
        return Err(DiffusionError::BadStepOrder { t, t_prev });
    }
    let x0_hat = posterior_mean_x0(sched, x_t, t, eps_hat)?;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar_or_one(t_prev);
    let sigma = eta * (((1.0 - ab_prev) / (1.0 - ab)) * (1.0 - ab / ab_prev)).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = x0_hat.lin_comb(ab_prev.sqrt(), eps_hat, dir)?;
    if sigma > 0.0 {
        let z = z.ok_or(DiffusionError::MissingNoise)?;
        out.axpy_in_place(sigma, z)?;
    }
    Ok(out)
}

/// Draws one sample from the prior: starts at standard normal on the mask
/// and runs the reverse chain along `plan` (ancestral steps when the plan is
/// full, skip steps otherwise), stitching seams after every step.
pub fn sample_unconditional<R: Rng + ?Sized>(
    sched: &VarianceSchedule,
    denoiser: &dyn Denoiser,
    plan: &DdimPlan,
    atlas: &UvAtlas,
    eta: f64,
    rng: &mut R,
) -> Result<DisplacementGrid, DiffusionError> {
    let full = plan.is_full(sched.t_max());
    let mut x = sample_noise(denoiser.mask(), rng);
    atlas.seam_project(&mut x)?;
    for (t, t_prev) in plan.pairs() {
        x = if full {
            let z = if t > 1 {
                sample_noise(denoiser.mask(), rng)
            } else {
                DisplacementGrid::zeros(denoiser.mask().clone())
            };
            ancestral_step(sched, denoiser, &x, t, &z)?
        } else {
            let needs_z = eta > 0.0 && t_prev > 0;
            let z = if needs_z {
                Some(sample_noise(denoiser.mask(), rng))
            } else {
                None
            };
            ddim_step(sched, denoiser, &x, t, t_prev, eta, z.as_ref())?
        };
        atlas.seam_project(&mut x)?;
    }
    Ok(x)
}
