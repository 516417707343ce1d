use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{DisplacementGrid, GeometryError, UvMask};

use super::schedule::VarianceSchedule;
use super::{Denoiser, DiffusionError};

/// Low-rank-plus-floor Gaussian over masked grid values:
/// x ~ N(mean, U·Uᵀ + lambda·I) with U of shape D×k, D = 3·|mask|.
///
/// Serves as a closed-form stand-in for a trained prior: its denoiser (see
/// [`GaussianDenoiser`]) is exact, so chain samplers and guidance can be
/// validated against analytic distributions.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mask: Arc<UvMask>,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    lambda: f64,
    gram: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(
        mean: &DisplacementGrid,
        columns: &[DisplacementGrid],
        lambda: f64,
    ) -> Result<Self, DiffusionError> {
        if lambda <= 0.0 {
            return Err(DiffusionError::NonPositiveFloor(lambda));
        }
        if columns.is_empty() {
            return Err(DiffusionError::EmptyFactor);
        }
        for c in columns {
            if !c.same_mask(mean) {
                return Err(GeometryError::MaskMismatch.into());
            }
        }
        let d = mean.mask().len() * 3;
        let mut factor = DMatrix::zeros(d, columns.len());
        for (j, c) in columns.iter().enumerate() {
            factor.set_column(j, &DVector::from_vec(c.to_masked_vec()));
        }
        let gram = factor.transpose() * &factor;
        Ok(Self {
            mask: mean.mask().clone(),
            mean: DVector::from_vec(mean.to_masked_vec()),
            factor,
            lambda,
            gram,
        })
    }

    pub fn mask(&self) -> &Arc<UvMask> {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mean_grid(&self) -> DisplacementGrid {
        DisplacementGrid::from_masked_vec(self.mask.clone(), self.mean.as_slice())
    }

    pub fn mean_vec(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor_matrix(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Dense covariance U·Uᵀ + lambda·I. Quadratic in D; test use only.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        &self.factor * self.factor.transpose() + DMatrix::identity(d, d) * self.lambda
    }

    /// One exact draw: mean + U·xi + sqrt(lambda)·eta.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DisplacementGrid {
        let k = self.rank();
        let xi = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.mean + &self.factor * xi + eta * self.lambda.sqrt();
        DisplacementGrid::from_masked_vec(self.mask.clone(), x.as_slice())
    }

    /// Solves (ᾱ·Σ + (1−ᾱ)·I)·q = v through the rank-k Woodbury identity:
    /// with c = ᾱλ + 1 − ᾱ, q = (v − ᾱ·U·(c·I + ᾱ·UᵀU)⁻¹·Uᵀv)/c.
    fn marginal_solve(&self, alpha_bar: f64, v: &DVector<f64>) -> DVector<f64> {
        let c = alpha_bar * self.lambda + 1.0 - alpha_bar;
        let k = self.rank();
        let m = DMatrix::identity(k, k) * c + &self.gram * alpha_bar;
        let rhs = self.factor.transpose() * v;
        let w = m
            .cholesky()
            .expect("c > 0 and UᵀU is PSD, so M is positive definite")
            .solve(&rhs);
        (v - &self.factor * w * alpha_bar) / c
    }
}

/// Exact noise predictor of a [`GaussianPrior`] under a variance schedule.
///
/// The forward marginal at step t is N(sqrt(ᾱ_t)·mean, A_t) with
/// A_t = ᾱ_t·Σ + (1−ᾱ_t)·I, so the optimal prediction is
/// ε̂ = sqrt(1−ᾱ_t)·A_t⁻¹·(x_t − sqrt(ᾱ_t)·mean), and the Jacobian
/// ∂ε̂/∂x_t = sqrt(1−ᾱ_t)·A_t⁻¹ is symmetric.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    prior: GaussianPrior,
    sched: VarianceSchedule,
}

impl GaussianDenoiser {
    pub fn new(prior: GaussianPrior, sched: VarianceSchedule) -> Self {
        Self { prior, sched }
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.sched
    }

    fn apply_operator(
        &self,
        x: &DisplacementGrid,
        t: usize,
        subtract_mean: bool,
    ) -> Result<DisplacementGrid, DiffusionError> {
        self.sched.check_t(t)?;
        if !(Arc::ptr_eq(x.mask(), &self.prior.mask) || **x.mask() == *self.prior.mask) {
            return Err(GeometryError::MaskMismatch.into());
        }
        let ab = self.sched.alpha_bar(t);
        let mut v = DVector::from_vec(x.to_masked_vec());
        if subtract_mean {
            v -= &self.prior.mean * ab.sqrt();
        }
        let q = self.prior.marginal_solve(ab, &v) * (1.0 - ab).sqrt();
        Ok(DisplacementGrid::from_masked_vec(
            self.prior.mask.clone(),
            q.as_slice(),
        ))
    }
}

impl Denoiser for GaussianDenoiser {
    fn mask(&self) -> &Arc<UvMask> {
        &self.prior.mask
    }

    fn t_max(&self) -> usize {
        self.sched.t_max()
    }

    fn predict_noise(
        &self,
        x_t: &DisplacementGrid,
        t: usize,
    ) -> Result<DisplacementGrid, DiffusionError> {
        self.apply_operator(x_t, t, true)
    }

    fn supports_exact_gradient(&self) -> bool {
        true
    }

    fn noise_vjp(
        &self,
        _x_t: &DisplacementGrid,
        t: usize,
        cotangent: &DisplacementGrid,
    ) -> Result<DisplacementGrid, DiffusionError> {
        // Symmetric Jacobian independent of the linearization point: the
        // pullback is the operator itself, applied to the cotangent.
        self.apply_operator(cotangent, t, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ops::{ancestral_step, sample_noise};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn two_pixel_mask() -> Arc<UvMask> {
        let mut inside = vec![false; 4];
        inside[0] = true;
        inside[3] = true;
        Arc::new(UvMask::new(2, inside).unwrap())
    }

    fn grid_from(mask: &Arc<UvMask>, v: &[f64]) -> DisplacementGrid {
        DisplacementGrid::from_masked_vec(mask.clone(), v)
    }

    /// D = 6 toy prior with dense-checkable numbers.
    fn toy_prior(lambda: f64) -> GaussianPrior {
        let mask = two_pixel_mask();
        let mean = grid_from(&mask, &[0.3, -0.1, 0.7, 0.0, 0.25, -0.5]);
        let u1 = grid_from(&mask, &[1.0, 0.5, -0.25, 0.0, 0.75, -1.5]);
        let u2 = grid_from(&mask, &[-0.2, 0.3, 0.1, 0.9, -0.4, 0.2]);
        GaussianPrior::new(&mean, &[u1, u2], lambda).unwrap()
    }

    #[test]
    fn identity_covariance_gives_the_scalar_formula() {
        // U = 0 and lambda = 1 make the covariance exactly I, where
        // ε̂ = sqrt(1−ᾱ_t)·x_t for zero mean.
        let mask = two_pixel_mask();
        let zero = DisplacementGrid::zeros(mask.clone());
        let prior = GaussianPrior::new(&zero, &[zero.clone()], 1.0).unwrap();
        let den = GaussianDenoiser::new(prior, VarianceSchedule::default_linear());
        let x = grid_from(&mask, &[0.4, -1.2, 0.05, 2.0, -0.7, 0.33]);
        for t in [1, 400, 1000] {
            let want = (1.0 - den.schedule().alpha_bar(t)).sqrt();
            let eps = den.predict_noise(&x, t).unwrap();
            for (e, xi) in eps.to_masked_vec().iter().zip(x.to_masked_vec()) {
                assert!((e - want * xi).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_limit_whitens_against_the_mean() {
        let mask = two_pixel_mask();
        let mean = grid_from(&mask, &[0.3, -0.1, 0.7, 0.0, 0.25, -0.5]);
        let zero = DisplacementGrid::zeros(mask.clone());
        let prior = GaussianPrior::new(&mean, &[zero], 1e-12).unwrap();
        let sched = VarianceSchedule::default_linear();
        let den = GaussianDenoiser::new(prior, sched.clone());
        let x = grid_from(&mask, &[0.9, 0.2, -0.3, 0.8, 0.1, -0.6]);
        let t = 500;
        let ab = sched.alpha_bar(t);
        let eps = den.predict_noise(&x, t).unwrap();
        for ((e, xi), mi) in eps
            .to_masked_vec()
            .iter()
            .zip(x.to_masked_vec())
            .zip(mean.to_masked_vec())
        {
            let want = (xi - ab.sqrt() * mi) / (1.0 - ab).sqrt();
            assert!((e - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn woodbury_path_matches_dense_solve() {
        let prior = toy_prior(0.3);
        let sched = VarianceSchedule::default_linear();
        let den = GaussianDenoiser::new(prior.clone(), sched.clone());
        let mask = prior.mask().clone();
        let x = grid_from(&mask, &[0.9, -0.2, 0.4, 1.1, -0.8, 0.05]);
        let sigma = prior.covariance_dense();
        for t in [1, 250, 777, 1000] {
            let ab = sched.alpha_bar(t);
            let d = prior.dim();
            let a = &sigma * ab + DMatrix::identity(d, d) * (1.0 - ab);
            let rhs = DVector::from_vec(x.to_masked_vec()) - prior.mean_vec() * ab.sqrt();
            let q = a.clone().lu().solve(&rhs).unwrap() * (1.0 - ab).sqrt();
            let eps = DVector::from_vec(den.predict_noise(&x, t).unwrap().to_masked_vec());
            let rel = (&eps - &q).norm() / q.norm();
            assert!(rel <= 1e-10, "t={t}: rel={rel:e}");

            // Pullback agrees with the dense symmetric operator too.
            let g = grid_from(&mask, &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
            let want =
                a.lu().solve(&DVector::from_vec(g.to_masked_vec())).unwrap() * (1.0 - ab).sqrt();
            let got = DVector::from_vec(den.noise_vjp(&x, t, &g).unwrap().to_masked_vec());
            assert!((&got - &want).norm() / want.norm() <= 1e-10);
        }
    }

    #[test]
    fn prediction_is_the_negative_scaled_score() {
        // ε̂ must equal −sqrt(1−ᾱ_t)·∇log p_t at the known marginal
        // p_t = N(sqrt(ᾱ_t)·mean, A_t); the score is checked by central
        // finite differences of the closed-form log density.
        let prior = toy_prior(0.5);
        let sched = VarianceSchedule::default_linear();
        let den = GaussianDenoiser::new(prior.clone(), sched.clone());
        let mask = prior.mask().clone();
        let x0 = [0.7, -0.4, 0.2, 0.9, -0.1, -0.3];
        let t = 600;
        let ab = sched.alpha_bar(t);
        let d = prior.dim();
        let a = prior.covariance_dense() * ab + DMatrix::identity(d, d) * (1.0 - ab);
        let a_inv = a.lu();
        let log_p = |v: &DVector<f64>| {
            let r = v - prior.mean_vec() * ab.sqrt();
            -0.5 * r.dot(&a_inv.solve(&r).unwrap())
        };
        let h = 1e-5;
        let base = DVector::from_row_slice(&x0);
        let eps = den.predict_noise(&grid_from(&mask, &x0), t).unwrap();
        let eps = eps.to_masked_vec();
        for i in 0..d {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += h;
            m[i] -= h;
            let score_i = (log_p(&p) - log_p(&m)) / (2.0 * h);
            let want = -(1.0 - ab).sqrt() * score_i;
            assert!(
                (eps[i] - want).abs() <= 1e-4 * want.abs().max(1.0),
                "dim {i}: {} vs {want}",
                eps[i]
            );
        }
    }

    #[test]
    fn prediction_ignores_unmasked_input_values() {
        let prior = toy_prior(0.3);
        let sched = VarianceSchedule::default_linear();
        let den = GaussianDenoiser::new(prior.clone(), sched);
        let mask = prior.mask().clone();
        let vals = [0.9, -0.2, 0.4, 1.1, -0.8, 0.05];
        let clean = grid_from(&mask, &vals);
        // Same masked values, garbage everywhere else.
        let mut full = vec![7.5; 2 * 2 * 3];
        let pix: Vec<_> = mask.pixels().to_vec();
        for (i, &(x, y)) in pix.iter().enumerate() {
            let o = (y * 2 + x) * 3;
            full[o..o + 3].copy_from_slice(&vals[3 * i..3 * i + 3]);
        }
        let dirty = DisplacementGrid::from_full(mask.clone(), &full);
        let a = den.predict_noise(&clean, 300).unwrap();
        let b = den.predict_noise(&dirty, 300).unwrap();
        assert_eq!(a.as_full(), b.as_full());
        // And the output is zero outside the mask.
        assert_eq!(&a.as_full()[3..6], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_ancestral_chain_reproduces_prior_moments() {
        let prior = toy_prior(0.4);
        let sched = VarianceSchedule::linear(300, 1e-4, 0.05).unwrap();
        let den = GaussianDenoiser::new(prior.clone(), sched.clone());
        let mask = prior.mask().clone();
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let n = 400;
        let d = prior.dim();
        let mut mean_acc = DVector::zeros(d);
        for _ in 0..n {
            let mut x = sample_noise(&mask, &mut rng);
            for t in (1..=300).rev() {
                let z = if t > 1 {
                    sample_noise(&mask, &mut rng)
                } else {
                    DisplacementGrid::zeros(mask.clone())
                };
                x = ancestral_step(&sched, &den, &x, t, &z).unwrap();
            }
            mean_acc += DVector::from_vec(x.to_masked_vec());
        }
        let mean = mean_acc / n as f64;
        let sigma = prior.covariance_dense();
        // Truncation shifts the mean by at most sqrt(ᾱ_T)·|mean| ≈ 0, and
        // each marginal variance is about Σ_ii; 3 standard errors plus the
        // truncation slack bounds the Monte Carlo deviation (seed pinned).
        let trunc = sched.alpha_bar(300).sqrt();
        for i in 0..d {
            let se = (sigma[(i, i)] / n as f64).sqrt();
            let slack = 3.0 * se + trunc * prior.mean_vec()[i].abs() + trunc;
            assert!(
                (mean[i] - prior.mean_vec()[i]).abs() <= slack,
                "dim {i}: {} vs {} (slack {slack:.4})",
                mean[i],
                prior.mean_vec()[i]
            );
        }
    }

    #[test]
    fn invalid_construction_is_rejected() {
        let mask = two_pixel_mask();
        let zero = DisplacementGrid::zeros(mask);
        assert!(matches!(
            GaussianPrior::new(&zero, &[zero.clone()], 0.0),
            Err(DiffusionError::NonPositiveFloor(_))
        ));
        assert!(matches!(
            GaussianPrior::new(&zero, &[], 0.1),
            Err(DiffusionError::EmptyFactor)
        ));
    }
}
