use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::diffusion::{
    ancestral_update, ddim_update, posterior_mean_x0, sample_noise, DdimPlan, Denoiser,
    VarianceSchedule,
};
use crate::geometry::{ClothTemplate, DisplacementGrid, GeometryError, TriangleMesh};

use super::config::{stage_at, GradientMode, GuidanceConfig, Stage, StepMode};
use super::distance::stage_distance;
use super::scan::{CoarseGuide, ScanPointCloud};
use super::GuidanceError;

/// Which reverse-chain update a registration uses: plain ancestral steps
/// when the plan visits every timestep, skip updates otherwise — the same
/// dispatch the unconditional sampler applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    Ancestral,
    Skip,
}

impl ChainMode {
    pub fn for_plan(plan: &DdimPlan, t_max: usize) -> Self {
        if plan.is_full(t_max) {
            ChainMode::Ancestral
        } else {
            ChainMode::Skip
        }
    }
}

/// Outcome of one guided reverse step.
#[derive(Debug, Clone)]
pub struct GuidedStep {
    pub state: DisplacementGrid,
    /// Data-distance value at the step's clean-state estimate, meters.
    pub distance: f64,
    /// Norm of the state-space guidance gradient before step sizing.
    pub grad_norm: f64,
}

/// One reverse step with manifold guidance: the ordinary denoising update
/// to `t_prev`, minus a sized gradient of the stage distance evaluated at
/// the clean-state estimate, with seams stitched afterwards.
///
/// Noise is drawn exactly as in unconditional sampling, so zero step sizes
/// reproduce it bit-for-bit under a shared rng stream.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse_step<R: Rng + ?Sized>(
    x_t: &DisplacementGrid,
    t: usize,
    t_prev: usize,
    stage: Stage,
    mode: ChainMode,
    denoiser: &dyn Denoiser,
    scan: &ScanPointCloud,
    guide: &CoarseGuide,
    cfg: &GuidanceConfig,
    sched: &VarianceSchedule,
    template: &ClothTemplate,
    rng: &mut R,
) -> Result<GuidedStep, GuidanceError> {
    let mask = denoiser.mask();
    let eps_hat = denoiser.predict_noise(x_t, t)?;
    let mut next = match mode {
        ChainMode::Ancestral => {
            let z = if t > 1 {
                sample_noise(mask, rng)
            } else {
                DisplacementGrid::zeros(mask.clone())
            };
            ancestral_update(sched, x_t, t, &eps_hat, &z)?
        }
        ChainMode::Skip => {
            let z = if cfg.eta > 0.0 && t_prev > 0 {
                Some(sample_noise(mask, rng))
            } else {
                None
            };
            ddim_update(sched, x_t, t, t_prev, &eps_hat, cfg.eta, z.as_ref())?
        }
    };

    // data distance at the clean-state estimate, in meters
    let x0_chain = posterior_mean_x0(sched, x_t, t, &eps_hat)?;
    x0_chain.ensure_finite()?;
    let scale = denoiser.value_scale();
    let mut x0_m = x0_chain;
    x0_m.scale_in_place(scale);
    let (distance, mut grad) = stage_distance(&x0_m, scan, guide, stage, cfg, template)?;

    // meters → chain units on the estimate, then pull back to the state
    grad.scale_in_place(scale);
    let ab = sched.alpha_bar(t);
    let grad_state = match cfg.gradient_mode {
        GradientMode::FrozenDenoiser => {
            grad.scale_in_place(1.0 / ab.sqrt());
            grad
        }
        GradientMode::Exact => {
            if !denoiser.supports_exact_gradient() {
                return Err(GuidanceError::ExactGradientUnavailable);
            }
            // x̂0 = x_t/sqrt(ᾱ_t) − sqrt((1−ᾱ_t)/ᾱ_t)·ε̂(x_t): the transpose
            // is an identity term plus the denoiser pullback
            let pulled = denoiser.noise_vjp(x_t, t, &grad)?;
            grad.lin_comb(1.0 / ab.sqrt(), &pulled, -((1.0 - ab) / ab).sqrt())?
        }
    };
    let grad_norm = grad_state.norm();
    let rho = cfg.rho(stage);
    let step = match cfg.step_mode {
        StepMode::NormalizedGradient => {
            // step length tracks the remaining noise level, independent of
            // the distance's own scale
            if grad_norm > 1e-12 {
                rho * (1.0 - ab).sqrt() / grad_norm
            } else {
                0.0
            }
        }
        StepMode::Fixed => rho,
    };
    if step > 0.0 {
        next.axpy_in_place(-step, &grad_state)?;
    }
    if cfg.stitch_seams {
        template.seam_project(&mut next)?;
    }
    Ok(GuidedStep {
        state: next,
        distance,
        grad_norm,
    })
}

/// Per-step record of a registration run.
#[derive(Debug, Clone)]
pub struct StepDiagnostic {
    /// 0-based position in the executed sequence; final-update repetitions
    /// continue counting past the plan.
    pub position: usize,
    pub t: usize,
    pub stage: Stage,
    pub distance: f64,
    pub grad_norm: f64,
}

/// A fitted frame.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Template topology with registered vertex positions.
    pub mesh: TriangleMesh,
    /// Final clean grid. `register` emits it in the denoiser's chain units
    /// (multiply by the value scale for meters); `laplacian_icp` emits
    /// meters directly.
    pub x0: DisplacementGrid,
    pub diagnostics: Vec<StepDiagnostic>,
    pub wall_time: Duration,
}

/// Registers the template to a scan: runs the guided reverse chain down
/// `plan`, switching from coarse to fine guidance for the last `cfg.tau`
/// plan steps, then repeats the final denoising update `cfg.final_repeats`
/// times with fine guidance. The scan and guide are expected in the
/// template frame (see `normalize_frame`).
#[allow(clippy::too_many_arguments)]
pub fn register(
    scan: &ScanPointCloud,
    guide: &CoarseGuide,
    denoiser: &dyn Denoiser,
    cfg: &GuidanceConfig,
    sched: &VarianceSchedule,
    plan: &DdimPlan,
    template: &ClothTemplate,
    seed: u64,
) -> Result<RegistrationResult, GuidanceError> {
    let start = Instant::now();
    if plan.is_empty() {
        return Err(GuidanceError::EmptyPlan);
    }
    cfg.validate(plan.len())?;
    guide.validate(template.vertex_count())?;
    if **denoiser.mask() != **template.atlas().mask() {
        return Err(GeometryError::MaskMismatch.into());
    }

    let s = plan.len();
    let mode = ChainMode::for_plan(plan, sched.t_max());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = sample_noise(denoiser.mask(), &mut rng);
    if cfg.stitch_seams {
        template.seam_project(&mut x)?;
    }

    let mut diagnostics = Vec::with_capacity(s + cfg.final_repeats);
    let mut position = 0usize;
    let run = |x: &DisplacementGrid,
               t: usize,
               t_prev: usize,
               stage: Stage,
               position: usize,
               rng: &mut ChaCha12Rng|
     -> Result<GuidedStep, GuidanceError> {
        let out = guided_reverse_step(
            x, t, t_prev, stage, mode, denoiser, scan, guide, cfg, sched, template, rng,
        )
        .map_err(|e| match e {
            // attach the position where the chain blew up
            GuidanceError::Geometry(GeometryError::NonFiniteGrid) => {
                GuidanceError::NonFiniteState { position, t }
            }
            other => other,
        })?;
        if !out.state.is_finite() {
            return Err(GuidanceError::NonFiniteState { position, t });
        }
        Ok(out)
    };

    for (t, t_prev) in plan.pairs() {
        let stage = stage_at(position, s, cfg.tau);
        let out = run(&x, t, t_prev, stage, position, &mut rng)?;
        x = out.state;
        diagnostics.push(StepDiagnostic {
            position,
            t,
            stage,
            distance: out.distance,
            grad_norm: out.grad_norm,
        });
        position += 1;
    }

    // settle high-frequency detail by repeating the final update
    let t_last = *plan.steps().last().expect("plan is non-empty");
    for _ in 0..cfg.final_repeats {
        let out = run(&x, t_last, 0, Stage::Fine, position, &mut rng)?;
        x = out.state;
        diagnostics.push(StepDiagnostic {
            position,
            t: t_last,
            stage: Stage::Fine,
            distance: out.distance,
            grad_norm: out.grad_norm,
        });
        position += 1;
    }

    let mut x_m = x.clone();
    x_m.scale_in_place(denoiser.value_scale());
    let mesh = template.apply_to_mesh(&x_m)?;
    Ok(RegistrationResult {
        mesh,
        x0: x,
        diagnostics,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{sample_unconditional, DiffusionError, GaussianDenoiser, GaussianPrior};
    use crate::geometry::test_support::square_template;
    use crate::geometry::UvMask;
    use nalgebra::{Point3, Vector3};
    use std::sync::Arc;

    fn toy_prior(mask: &Arc<UvMask>, seed: u64) -> GaussianPrior {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = mask.len() * 3;
        let mean = DisplacementGrid::from_masked_vec(
            mask.clone(),
            &(0..d).map(|_| rng.gen_range(-0.1..0.1)).collect::<Vec<_>>(),
        );
        let cols: Vec<DisplacementGrid> = (0..3)
            .map(|_| {
                DisplacementGrid::from_masked_vec(
                    mask.clone(),
                    &(0..d)
                        .map(|_| rng.gen_range(-0.08..0.08))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        GaussianPrior::new(&mean, &cols, 0.02).unwrap()
    }

    struct Fixture {
        template: ClothTemplate,
        denoiser: GaussianDenoiser,
        sched: VarianceSchedule,
        target: Vec<Point3<f64>>,
        scan: ScanPointCloud,
        guide: CoarseGuide,
    }

    /// Gaussian-prior toy whose scan and guide are built from a prior draw.
    fn fixture(t_max: usize) -> Fixture {
        let template = square_template(16);
        let mask = template.atlas().mask().clone();
        let prior = toy_prior(&mask, 40);
        let sched = VarianceSchedule::linear(t_max, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let x_target = prior.sample(&mut rng);
        let target = template.apply(&x_target).unwrap();
        let normals: Vec<Vector3<f64>> = (0..target.len()).map(|_| Vector3::z()).collect();
        let scan = ScanPointCloud::new(target.clone(), normals).unwrap();
        let guide = CoarseGuide::Dense(target.clone());
        let denoiser = GaussianDenoiser::new(prior, sched.clone());
        Fixture {
            template,
            denoiser,
            sched,
            target,
            scan,
            guide,
        }
    }

    fn mean_vertex_error(mesh: &TriangleMesh, target: &[Point3<f64>]) -> f64 {
        mesh.vertices()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / target.len() as f64
    }

    fn unguided_cfg() -> GuidanceConfig {
        GuidanceConfig {
            rho_coarse: 0.0,
            rho_fine: 0.0,
            final_repeats: 0,
            tau: 2,
            ..GuidanceConfig::default()
        }
    }

    #[test]
    fn zero_step_size_reproduces_unconditional_sampling_bitwise() {
        let f = fixture(400);
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let cfg = unguided_cfg();
        let res = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            77,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let free = sample_unconditional(
            &f.sched,
            &f.denoiser,
            &plan,
            f.template.atlas(),
            0.0,
            &mut rng,
        )
        .unwrap();
        let a: Vec<u64> = res.x0.to_masked_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = free.to_masked_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_step_size_matches_the_ancestral_chain_too() {
        let f = fixture(60);
        let plan = DdimPlan::full(60);
        let cfg = unguided_cfg();
        let res = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            5,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let free = sample_unconditional(
            &f.sched,
            &f.denoiser,
            &plan,
            f.template.atlas(),
            0.0,
            &mut rng,
        )
        .unwrap();
        let a: Vec<u64> = res.x0.to_masked_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = free.to_masked_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn guidance_pulls_the_sample_onto_the_target() {
        let f = fixture(400);
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let free = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &unguided_cfg(),
            &f.sched,
            &plan,
            &f.template,
            9,
        )
        .unwrap();
        let cfg = GuidanceConfig {
            tau: 3,
            final_repeats: 2,
            ..GuidanceConfig::default()
        };
        let fit = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            9,
        )
        .unwrap();
        let e_free = mean_vertex_error(&free.mesh, &f.target);
        let e_fit = mean_vertex_error(&fit.mesh, &f.target);
        assert!(e_fit < 0.5 * e_free, "guided {e_fit} vs unguided {e_free}");
    }

    #[test]
    fn exact_gradient_mode_agrees_with_the_frozen_approximation() {
        let f = fixture(400);
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let free = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &unguided_cfg(),
            &f.sched,
            &plan,
            &f.template,
            13,
        )
        .unwrap();
        let e_free = mean_vertex_error(&free.mesh, &f.target);
        let mut errors = Vec::new();
        for mode in [GradientMode::FrozenDenoiser, GradientMode::Exact] {
            let cfg = GuidanceConfig {
                tau: 3,
                final_repeats: 2,
                gradient_mode: mode,
                ..GuidanceConfig::default()
            };
            let fit = register(
                &f.scan,
                &f.guide,
                &f.denoiser,
                &cfg,
                &f.sched,
                &plan,
                &f.template,
                13,
            )
            .unwrap();
            errors.push(mean_vertex_error(&fit.mesh, &f.target));
        }
        assert!(
            errors[0] < 0.5 * e_free,
            "frozen {} free {}",
            errors[0],
            e_free
        );
        assert!(
            errors[1] < 0.5 * e_free,
            "exact {} free {}",
            errors[1],
            e_free
        );
    }

    #[test]
    fn diagnostics_cover_plan_and_repetitions_in_order() {
        let f = fixture(400);
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let cfg = GuidanceConfig {
            tau: 3,
            final_repeats: 2,
            ..GuidanceConfig::default()
        };
        let res = register(
            &f.scan,
            &f.guide,
            &f.denoiser,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            21,
        )
        .unwrap();
        assert_eq!(res.diagnostics.len(), 12);
        for (i, d) in res.diagnostics.iter().enumerate() {
            assert_eq!(d.position, i);
            assert!(d.distance.is_finite());
            assert!(d.grad_norm.is_finite());
            let expected_stage = if i < 7 { Stage::Coarse } else { Stage::Fine };
            assert_eq!(d.stage, expected_stage, "position {i}");
        }
        assert_eq!(res.diagnostics[9].t, 1);
        // repetitions re-run the final update at the same timestep
        assert_eq!(res.diagnostics[10].t, 1);
        assert_eq!(res.diagnostics[11].t, 1);
        let plan_ts: Vec<usize> = res.diagnostics[..10].iter().map(|d| d.t).collect();
        assert_eq!(plan_ts, plan.steps());
    }

    /// Per-step descent of the coarse distance on the deterministic chain.
    /// Holds for step scales in [0.5, 1.0] (see the `rho_coarse` docs):
    /// below that the prior's per-step drift outruns the guidance pull,
    /// above it the normalized steps overshoot late in the stage.
    #[test]
    fn coarse_distance_descends_within_the_bracketed_step_scale() {
        for rho in [0.5, 1.0] {
            let f = fixture(400);
            let plan = DdimPlan::evenly_spaced(400, 50).unwrap();
            let cfg = GuidanceConfig {
                tau: 20,
                final_repeats: 0,
                rho_coarse: rho,
                ..GuidanceConfig::default()
            };
            let res = register(
                &f.scan,
                &f.guide,
                &f.denoiser,
                &cfg,
                &f.sched,
                &plan,
                &f.template,
                33,
            )
            .unwrap();
            let coarse: Vec<f64> = res
                .diagnostics
                .iter()
                .filter(|d| d.stage == Stage::Coarse)
                .map(|d| d.distance)
                .collect();
            assert_eq!(coarse.len(), 30);
            for w in coarse.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-9),
                    "coarse distance rose at rho {rho}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
            let (first, last) = (coarse[0], *coarse.last().unwrap());
            assert!(
                last < 0.75 * first,
                "coarse stage barely moved at rho {rho}: {first} -> {last}"
            );
        }
    }

    /// Denoiser stub with configurable gradient support.
    struct Stub {
        mask: Arc<UvMask>,
        t_max: usize,
        nan: bool,
    }

    impl Denoiser for Stub {
        fn mask(&self) -> &Arc<UvMask> {
            &self.mask
        }
        fn t_max(&self) -> usize {
            self.t_max
        }
        fn predict_noise(
            &self,
            _x_t: &DisplacementGrid,
            _t: usize,
        ) -> Result<DisplacementGrid, DiffusionError> {
            let mut g = DisplacementGrid::zeros(self.mask.clone());
            if self.nan {
                let (px, py) = self.mask.pixels()[0];
                g.set(px, py, [f64::NAN, 0.0, 0.0]);
            }
            Ok(g)
        }
        fn supports_exact_gradient(&self) -> bool {
            false
        }
        fn noise_vjp(
            &self,
            _x_t: &DisplacementGrid,
            _t: usize,
            _cotangent: &DisplacementGrid,
        ) -> Result<DisplacementGrid, DiffusionError> {
            Err(DiffusionError::NoExactGradient)
        }
    }

    #[test]
    fn exact_mode_needs_a_denoiser_with_gradients() {
        let f = fixture(400);
        let stub = Stub {
            mask: f.template.atlas().mask().clone(),
            t_max: 400,
            nan: false,
        };
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let cfg = GuidanceConfig {
            gradient_mode: GradientMode::Exact,
            tau: 3,
            ..GuidanceConfig::default()
        };
        let err = register(
            &f.scan,
            &f.guide,
            &stub,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, GuidanceError::ExactGradientUnavailable));
    }

    #[test]
    fn non_finite_states_abort_with_the_step_position() {
        let f = fixture(400);
        let stub = Stub {
            mask: f.template.atlas().mask().clone(),
            t_max: 400,
            nan: true,
        };
        let plan = DdimPlan::evenly_spaced(400, 10).unwrap();
        let cfg = GuidanceConfig {
            tau: 3,
            ..GuidanceConfig::default()
        };
        let err = register(
            &f.scan,
            &f.guide,
            &stub,
            &cfg,
            &f.sched,
            &plan,
            &f.template,
            1,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                GuidanceError::NonFiniteState {
                    position: 0,
                    t: 400
                }
            ),
            "{err:?}"
        );
    }
}
