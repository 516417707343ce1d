use super::GuidanceError;

/// Which half of the multi-stage data distance drives a reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Robust distance from guided vertices to coarse targets; moves large
    /// deformations early in the chain.
    Coarse,
    /// Robust point-to-plane misfit from scan points to the estimate;
    /// refines detail late in the chain.
    Fine,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        }
    }
}

/// How the data-distance gradient is pulled back from the clean-state
/// estimate to the running state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Treat the noise estimate as constant: the pullback is the scalar
    /// 1/sqrt(ᾱ_t). Cheap, and the default.
    FrozenDenoiser,
    /// Differentiate through the denoiser via its gradient hook.
    Exact,
}

/// How the per-step guidance step size is formed from `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// step = rho · sqrt(1−ᾱ_t) / ‖gradient‖: the update has norm
    /// proportional to the remaining noise level regardless of the
    /// distance's scale.
    NormalizedGradient,
    /// step = rho, applied to the raw gradient.
    Fixed,
}

/// Tuning knobs of the guided reverse process.
#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    /// Base step-size factor for the coarse stage. On the Gaussian-oracle
    /// toy with a 50-step plan, per-step descent of the coarse distance
    /// holds for values in [0.5, 1.0] — the default sits at the top of that
    /// bracket. Larger values overshoot late in the stage; smaller ones let
    /// the prior's per-step drift dominate early.
    pub rho_coarse: f64,
    /// Base step-size factor for the fine stage.
    pub rho_fine: f64,
    /// Number of trailing plan steps driven by the fine stage. 0 keeps the
    /// whole plan coarse; a value equal to the plan length makes every step
    /// fine.
    pub tau: usize,
    /// Huber width of the coarse-stage distance, meters.
    pub huber_delta_coarse: f64,
    /// Huber width of the fine-stage distance, meters.
    pub huber_delta_fine: f64,
    /// Extra repetitions of the final denoising update, fine-guided.
    pub final_repeats: usize,
    pub gradient_mode: GradientMode,
    pub step_mode: StepMode,
    /// Stitch seams after every step (disable only for ablation).
    pub stitch_seams: bool,
    /// Stochasticity of skip steps; 0 keeps the chain deterministic.
    pub eta: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            rho_coarse: 1.0,
            rho_fine: 0.3,
            tau: 20,
            huber_delta_coarse: 0.050,
            huber_delta_fine: 0.005,
            final_repeats: 5,
            gradient_mode: GradientMode::FrozenDenoiser,
            step_mode: StepMode::NormalizedGradient,
            stitch_seams: true,
            eta: 0.0,
        }
    }
}

impl GuidanceConfig {
    /// Validates against the plan the config will drive. Zero step sizes
    /// are allowed: they degenerate to unconditional sampling.
    pub fn validate(&self, plan_len: usize) -> Result<(), GuidanceError> {
        for rho in [self.rho_coarse, self.rho_fine] {
            if !rho.is_finite() || rho < 0.0 {
                return Err(GuidanceError::BadRho(rho));
            }
        }
        for delta in [self.huber_delta_coarse, self.huber_delta_fine] {
            if !delta.is_finite() || delta <= 0.0 {
                return Err(GuidanceError::BadDelta(delta));
            }
        }
        if self.tau > plan_len {
            return Err(GuidanceError::TauOutOfRange {
                tau: self.tau,
                plan_len,
            });
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(GuidanceError::BadEta(self.eta));
        }
        Ok(())
    }

    pub fn rho(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Coarse => self.rho_coarse,
            Stage::Fine => self.rho_fine,
        }
    }

    pub fn huber_delta(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Coarse => self.huber_delta_coarse,
            Stage::Fine => self.huber_delta_fine,
        }
    }
}

/// Stage of plan position `position` (0-based from the noisiest step) in a
/// plan of `plan_len` steps: the last `tau` positions are fine, everything
/// earlier coarse. Positions past the plan (the final-update repetitions)
/// are always fine.
pub fn stage_at(position: usize, plan_len: usize, tau: usize) -> Stage {
    if plan_len.saturating_sub(position) <= tau {
        Stage::Fine
    } else {
        Stage::Coarse
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_switches_after_the_breakpoint() {
        // 50 steps, last 20 fine
        assert_eq!(stage_at(0, 50, 20), Stage::Coarse);
        assert_eq!(stage_at(29, 50, 20), Stage::Coarse);
        assert_eq!(stage_at(30, 50, 20), Stage::Fine);
        assert_eq!(stage_at(49, 50, 20), Stage::Fine);
        // repetitions past the plan stay fine even with tau = 0
        assert_eq!(stage_at(50, 50, 0), Stage::Fine);
        assert_eq!(stage_at(55, 50, 0), Stage::Fine);
        // tau = 0 never switches inside the plan
        assert_eq!(stage_at(49, 50, 0), Stage::Coarse);
        // tau = plan length is fine from the start
        assert_eq!(stage_at(0, 50, 50), Stage::Fine);
    }

    #[test]
    fn validation_rejects_out_of_range_fields() {
        let ok = GuidanceConfig::default();
        assert!(ok.validate(50).is_ok());

        let c = GuidanceConfig {
            rho_fine: -0.1,
            ..GuidanceConfig::default()
        };
        assert!(matches!(c.validate(50), Err(GuidanceError::BadRho(_))));

        let c = GuidanceConfig {
            huber_delta_coarse: 0.0,
            ..GuidanceConfig::default()
        };
        assert!(matches!(c.validate(50), Err(GuidanceError::BadDelta(_))));

        let c = GuidanceConfig {
            tau: 51,
            ..GuidanceConfig::default()
        };
        assert!(matches!(
            c.validate(50),
            Err(GuidanceError::TauOutOfRange {
                tau: 51,
                plan_len: 50
            })
        ));

        let c = GuidanceConfig {
            eta: f64::NAN,
            ..GuidanceConfig::default()
        };
        assert!(matches!(c.validate(50), Err(GuidanceError::BadEta(_))));

        // zero step sizes are the sanctioned unguided degenerate
        let c = GuidanceConfig {
            rho_coarse: 0.0,
            rho_fine: 0.0,
            ..GuidanceConfig::default()
        };
        assert!(c.validate(50).is_ok());
    }
}
