use super::DiffusionError;

/// Variance schedule of the diffusion chain, 1-indexed: `beta(1)` is the
/// first step's variance, `alpha_bar(t) = Π_{i≤t} (1 − beta(i))`.
///
/// The boundary convention is `alpha_bar(0) = 1`, which makes the final
/// ancestral step noiseless (`sigma(1) = 0`).
#[derive(Debug, Clone)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    /// Linear interpolation from `beta1` to `beta_t_max` inclusive.
    pub fn linear(t_max: usize, beta1: f64, beta_t_max: f64) -> Result<Self, DiffusionError> {
        if t_max < 2 {
            return Err(DiffusionError::TooFewSteps(t_max));
        }
        if !(beta1 > 0.0 && beta1 < beta_t_max && beta_t_max < 1.0) {
            return Err(DiffusionError::BadBetaRange {
                beta1,
                beta_t: beta_t_max,
            });
        }
        let mut betas = Vec::with_capacity(t_max);
        let mut alphas = Vec::with_capacity(t_max);
        let mut alpha_bars = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for i in 0..t_max {
            let beta = beta1 + (i as f64 / (t_max - 1) as f64) * (beta_t_max - beta1);
            let alpha = 1.0 - beta;
            prod *= alpha;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// The schedule used throughout: T = 1000, beta from 1e-4 to 0.02.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).unwrap()
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t >= 1 && t <= self.t_max() {
            Ok(())
        } else {
            Err(DiffusionError::InvalidTimestep {
                t,
                t_max: self.t_max(),
            })
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// `alpha_bar` extended to t = 0 by the boundary convention.
    pub fn alpha_bar_or_one(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Ancestral-step noise level: σ_t = sqrt(((1−ᾱ_{t−1})/(1−ᾱ_t))·β_t).
    /// Zero at t = 1.
    pub fn sigma(&self, t: usize) -> f64 {
        let prev = self.alpha_bar_or_one(t - 1);
        (((1.0 - prev) / (1.0 - self.alpha_bar(t))) * self.beta(t)).sqrt()
    }
}

/// Descending timestep subsequence for skip (DDIM) sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdimPlan {
    steps: Vec<usize>,
}

impl DdimPlan {
    /// `s` steps evenly spaced over [1, t_max], largest first; both
    /// endpoints are always included.
    pub fn evenly_spaced(t_max: usize, s: usize) -> Result<Self, DiffusionError> {
        if s < 2 || s > t_max {
            return Err(DiffusionError::BadPlanLength { s, t_max });
        }
        let steps: Vec<usize> = (0..s)
            .rev()
            .map(|i| (1.0 + (t_max - 1) as f64 * i as f64 / (s - 1) as f64).round() as usize)
            .collect();
        debug_assert!(steps.windows(2).all(|w| w[0] > w[1]));
        Ok(Self { steps })
    }

    /// Every timestep t_max..1; drives plain ancestral sampling.
    pub fn full(t_max: usize) -> Self {
        Self {
            steps: (1..=t_max).rev().collect(),
        }
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Whether the plan visits every timestep of a T-step schedule.
    pub fn is_full(&self, t_max: usize) -> bool {
        self.steps.len() == t_max
    }

    /// Consecutive (t, t_prev) pairs, ending with (1, 0): the state advances
    /// from x_t to x_{t_prev} on each pair.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}
