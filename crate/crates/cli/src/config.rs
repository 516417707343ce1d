//! Experiment configuration: a TOML file with sections mirroring the
//! library configs. Unknown keys anywhere are errors.
//!
//! Configs carry no random seeds — the seed is a separate CLI input
//! threaded through every stage. The SHA-256 hash of the canonical config
//! therefore identifies the experiment design, and (hash, seed) pins the
//! exact bytes of every artifact.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use drape_core::baseline::BaselineConfig;
use drape_core::diffusion::{DdimPlan, VarianceSchedule};
use drape_core::guidance::{GradientMode, GuidanceConfig, StepMode};
use drape_core::nn::{NetSpec, TrainConfig};
use drape_core::synth::{ClothSpec, DeformationParams, PanelLayout, ScanConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub cloth: ClothSection,
    pub deform: DeformSection,
    pub scan: ScanSection,
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub plan: PlanSection,
    pub guidance: GuidanceSection,
    pub baseline: BaselineSection,
    pub guide: GuideSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    /// Runs every section conversion so a bad config fails at load time,
    /// not halfway through an experiment.
    pub fn validate(&self) -> Result<()> {
        self.cloth.to_spec()?;
        self.deform.to_params(&self.cloth.to_spec()?, 0)?;
        self.scan.to_config()?;
        let sched = self.schedule.to_schedule()?;
        self.net.to_spec()?;
        self.train.to_config(0)?;
        let plan = self.plan.to_plan(&sched)?;
        self.guidance.to_config(plan.len())?;
        self.baseline.to_config()?;
        if self.guide.kind == GuideKind::Keypoints && self.guide.keypoints < 3 {
            bail!("guide.keypoints must be at least 3, got {}", self.guide.keypoints);
        }
        if !(0.0..=1.0).contains(&self.guide.smooth_factor) {
            bail!("guide.smooth_factor must lie in [0, 1], got {}", self.guide.smooth_factor);
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            cloth: ClothSection::default(),
            deform: DeformSection::default(),
            scan: ScanSection::default(),
            dataset: DatasetSection::default(),
            schedule: ScheduleSection::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
            plan: PlanSection::default(),
            guidance: GuidanceSection::default(),
            baseline: BaselineSection::default(),
            guide: GuideSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClothSection {
    pub layout: PanelLayout,
    pub panel_width: f64,
    pub panel_height: f64,
    pub cols: usize,
    pub rows: usize,
    pub grid_resolution: usize,
}

impl Default for ClothSection {
    fn default() -> Self {
        let s = ClothSpec::default();
        Self {
            layout: s.layout,
            panel_width: s.panel_width,
            panel_height: s.panel_height,
            cols: s.cols,
            rows: s.rows,
            grid_resolution: s.grid_resolution,
        }
    }
}

impl ClothSection {
    pub fn to_spec(&self) -> Result<ClothSpec> {
        let spec = ClothSpec {
            layout: self.layout,
            panel_width: self.panel_width,
            panel_height: self.panel_height,
            cols: self.cols,
            rows: self.rows,
            grid_resolution: self.grid_resolution,
        };
        spec.validate().context("cloth section")?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformSection {
    pub bend_amplitude: f64,
    pub twist_amplitude: f64,
    pub swing_amplitude: f64,
    pub flare_amplitude: f64,
    pub wrinkle_amplitude: f64,
    pub wrinkle_wavelength: f64,
    pub compression_coupling: f64,
}

impl Default for DeformSection {
    fn default() -> Self {
        let p = DeformationParams::default();
        Self {
            bend_amplitude: p.bend_amplitude,
            twist_amplitude: p.twist_amplitude,
            swing_amplitude: p.swing_amplitude,
            flare_amplitude: p.flare_amplitude,
            wrinkle_amplitude: p.wrinkle_amplitude,
            wrinkle_wavelength: p.wrinkle_wavelength,
            compression_coupling: p.compression_coupling,
        }
    }
}

impl DeformSection {
    pub fn to_params(&self, spec: &ClothSpec, seed: u64) -> Result<DeformationParams> {
        let params = DeformationParams {
            bend_amplitude: self.bend_amplitude,
            twist_amplitude: self.twist_amplitude,
            swing_amplitude: self.swing_amplitude,
            flare_amplitude: self.flare_amplitude,
            wrinkle_amplitude: self.wrinkle_amplitude,
            wrinkle_wavelength: self.wrinkle_wavelength,
            compression_coupling: self.compression_coupling,
            seed,
        };
        params.validate(spec).context("deform section")?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub viewpoints: usize,
    pub samples_per_frame: usize,
    pub gaussian_sigma_mm: f64,
    pub laplace_b_mm: f64,
    pub occlusion: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        let c = ScanConfig::default();
        Self {
            viewpoints: c.viewpoints,
            samples_per_frame: c.samples_per_frame,
            gaussian_sigma_mm: c.gaussian_sigma_mm,
            laplace_b_mm: c.laplace_b_mm,
            occlusion: c.occlusion,
        }
    }
}

impl ScanSection {
    pub fn to_config(&self) -> Result<ScanConfig> {
        let cfg = ScanConfig {
            viewpoints: self.viewpoints,
            samples_per_frame: self.samples_per_frame,
            gaussian_sigma_mm: self.gaussian_sigma_mm,
            laplace_b_mm: self.laplace_b_mm,
            occlusion: self.occlusion,
        };
        cfg.validate().context("scan section")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// In-range animation frames; extrapolation frames are appended on top.
    pub frames: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { frames: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleSection {
    pub fn to_schedule(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::linear(self.t_max, self.beta_start, self.beta_end)
            .context("schedule section")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub widths: [usize; 3],
    pub embed_dim: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let s = NetSpec::default();
        Self {
            widths: s.widths,
            embed_dim: s.embed_dim,
        }
    }
}

impl NetSection {
    pub fn to_spec(&self) -> Result<NetSpec> {
        let spec = NetSpec {
            widths: self.widths,
            embed_dim: self.embed_dim,
        };
        spec.validate().context("net section")?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub ema_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            iterations: c.iterations,
            ema_decay: c.ema_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            seed,
            ema_decay: self.ema_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        };
        cfg.validate().context("train section")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    /// Reverse-chain length S: the plan visits S evenly spaced timesteps.
    pub steps: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self { steps: 50 }
    }
}

impl PlanSection {
    pub fn to_plan(&self, sched: &VarianceSchedule) -> Result<DdimPlan> {
        DdimPlan::evenly_spaced(sched.t_max(), self.steps).context("plan section")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientModeName {
    Frozen,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepModeName {
    Normalized,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub rho_coarse: f64,
    pub rho_fine: f64,
    /// Trailing plan steps driven by point-to-plane guidance.
    pub tau: usize,
    /// Meters.
    pub huber_delta_coarse: f64,
    /// Meters.
    pub huber_delta_fine: f64,
    pub final_repeats: usize,
    pub gradient_mode: GradientModeName,
    pub step_mode: StepModeName,
    pub stitch_seams: bool,
    pub eta: f64,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let c = GuidanceConfig::default();
        Self {
            rho_coarse: c.rho_coarse,
            rho_fine: c.rho_fine,
            tau: c.tau,
            huber_delta_coarse: c.huber_delta_coarse,
            huber_delta_fine: c.huber_delta_fine,
            final_repeats: c.final_repeats,
            gradient_mode: GradientModeName::Frozen,
            step_mode: StepModeName::Normalized,
            stitch_seams: c.stitch_seams,
            eta: c.eta,
        }
    }
}

impl GuidanceSection {
    pub fn to_config(&self, plan_len: usize) -> Result<GuidanceConfig> {
        let cfg = GuidanceConfig {
            rho_coarse: self.rho_coarse,
            rho_fine: self.rho_fine,
            tau: self.tau,
            huber_delta_coarse: self.huber_delta_coarse,
            huber_delta_fine: self.huber_delta_fine,
            final_repeats: self.final_repeats,
            gradient_mode: match self.gradient_mode {
                GradientModeName::Frozen => GradientMode::FrozenDenoiser,
                GradientModeName::Exact => GradientMode::Exact,
            },
            step_mode: match self.step_mode {
                StepModeName::Normalized => StepMode::NormalizedGradient,
                StepModeName::Fixed => StepMode::Fixed,
            },
            stitch_seams: self.stitch_seams,
            eta: self.eta,
        };
        cfg.validate(plan_len).context("guidance section")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub iterations: usize,
    pub step: f64,
    pub lambda: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let c = BaselineConfig::default();
        Self {
            iterations: c.iterations,
            step: c.step,
            lambda: c.lambda,
        }
    }
}

impl BaselineSection {
    pub fn to_config(&self) -> Result<BaselineConfig> {
        let cfg = BaselineConfig {
            iterations: self.iterations,
            step: self.step,
            lambda: self.lambda,
        };
        cfg.validate().context("baseline section")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuideKind {
    /// Smoothed ground truth standing in for a dense coarse tracker.
    Dense,
    /// Ground-truth targets at a random subset of vertices.
    Keypoints,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuideSection {
    pub kind: GuideKind,
    /// Laplacian smoothing rounds applied to the truth for dense guides.
    pub smooth_iterations: usize,
    /// Per-round blend toward the neighbor mean, in [0, 1].
    pub smooth_factor: f64,
    /// Number of keypoint constraints N_k.
    pub keypoints: usize,
}

impl Default for GuideSection {
    fn default() -> Self {
        Self {
            kind: GuideKind::Dense,
            smooth_iterations: 10,
            smooth_factor: 0.5,
            keypoints: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Interpolation,
    Extrapolation,
}

impl SplitName {
    pub fn label(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Interpolation => "interpolation",
            SplitName::Extrapolation => "extrapolation",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: SplitName,
    /// Cap on evaluated frames; 0 means the whole split.
    pub max_frames: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: SplitName::Interpolation,
            max_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Breakpoints to sweep, as fractions of the plan length.
    pub tau_fractions: Vec<f64>,
    pub keypoint_counts: Vec<usize>,
    pub noise_sigmas_mm: Vec<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            tau_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            keypoint_counts: vec![50, 100, 200],
            noise_sigmas_mm: vec![0.0, 1.0, 3.0, 5.0],
        }
    }
}

impl Default for String {
    fn default() -> Self {
        default_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("[cloth]\nwingspan = 2.0\n");
        assert!(err.is_err());
        let err = toml::from_str::<ExperimentConfig>("mystery = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a: ExperimentConfig = toml::from_str("[plan]\nsteps = 25\n").unwrap();
        let b: ExperimentConfig = toml::from_str("# comment\n[plan]\nsteps    = 25\n").unwrap();
        let c: ExperimentConfig = toml::from_str("[plan]\nsteps = 50\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(c.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn validation_catches_bad_sections() {
        let cfg: ExperimentConfig = toml::from_str("[guidance]\nrho_fine = -1.0\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig = toml::from_str("[cloth]\ncols = 1\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig = toml::from_str("[guide]\nkind = \"keypoints\"\nkeypoints = 2\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
