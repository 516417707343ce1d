//! Adapter exposing a trained network as a reverse-chain noise predictor.

use std::sync::Arc;

use crate::diffusion::{Denoiser, DiffusionError, VarianceSchedule};
use crate::geometry::{ClothTemplate, DisplacementGrid, GeometryError, UvMask};

use super::checkpoint::Checkpoint;
use super::net::DenoiserNet;
use super::tensor::{apply_pixel_mask, pixel_mask, Tensor};
use super::NnError;

/// A trained float32 network driving the reverse chain. The chain state is
/// in normalized grid units; `value_scale` converts back to meters.
pub struct NetDenoiser {
    net: DenoiserNet<f32>,
    sched: VarianceSchedule,
    mask: Arc<UvMask>,
    value_scale: f64,
    plane: Vec<f32>,
}

impl NetDenoiser {
    pub fn new(
        net: DenoiserNet<f32>,
        sched: VarianceSchedule,
        mask: Arc<UvMask>,
        value_scale: f64,
    ) -> Result<Self, NnError> {
        DenoiserNet::<f32>::check_resolution(mask.resolution())?;
        if !(value_scale > 0.0 && value_scale.is_finite()) {
            return Err(NnError::BadValueScale(value_scale));
        }
        let plane = pixel_mask::<f32>(&mask);
        Ok(Self {
            net,
            sched,
            mask,
            value_scale,
            plane,
        })
    }

    /// Loads the EMA evaluation weights of a checkpoint, after verifying it
    /// was trained for this template's atlas.
    pub fn from_checkpoint(ckpt: &Checkpoint, template: &ClothTemplate) -> Result<Self, NnError> {
        ckpt.validate_template(template)?;
        let net = ckpt.build_net(true)?;
        let sched = ckpt.schedule()?;
        Self::new(
            net,
            sched,
            template.atlas().mask().clone(),
            ckpt.value_scale,
        )
    }

    pub fn net(&self) -> &DenoiserNet<f32> {
        &self.net
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.sched
    }

    fn check_input(&self, x: &DisplacementGrid, t: usize) -> Result<(), DiffusionError> {
        self.sched.check_t(t)?;
        if !(Arc::ptr_eq(x.mask(), &self.mask) || **x.mask() == *self.mask) {
            return Err(GeometryError::MaskMismatch.into());
        }
        Ok(())
    }

    fn masked_input(&self, x: &DisplacementGrid) -> Tensor<f32> {
        let mut input = Tensor::<f32>::from_grid(x);
        apply_pixel_mask(&mut input, &self.plane);
        input
    }
}

impl Denoiser for NetDenoiser {
    fn mask(&self) -> &Arc<UvMask> {
        &self.mask
    }

    fn t_max(&self) -> usize {
        self.sched.t_max()
    }

    fn value_scale(&self) -> f64 {
        self.value_scale
    }

    fn predict_noise(
        &self,
        x_t: &DisplacementGrid,
        t: usize,
    ) -> Result<DisplacementGrid, DiffusionError> {
        self.check_input(x_t, t)?;
        let (mut out, _) = self.net.forward(&self.masked_input(x_t), t);
        apply_pixel_mask(&mut out, &self.plane);
        Ok(out.to_grid(&self.mask))
    }

    fn supports_exact_gradient(&self) -> bool {
        true
    }

    fn noise_vjp(
        &self,
        x_t: &DisplacementGrid,
        t: usize,
        cotangent: &DisplacementGrid,
    ) -> Result<DisplacementGrid, DiffusionError> {
        self.check_input(x_t, t)?;
        if !(Arc::ptr_eq(cotangent.mask(), &self.mask) || **cotangent.mask() == *self.mask) {
            return Err(GeometryError::MaskMismatch.into());
        }
        let (_, cache) = self.net.forward(&self.masked_input(x_t), t);
        // cotangent on the raw output passes through the output mask first
        let mut g_out = Tensor::<f32>::from_grid(cotangent);
        apply_pixel_mask(&mut g_out, &self.plane);
        let (_, mut g_in) = self.net.backward(&cache, &g_out);
        apply_pixel_mask(&mut g_in, &self.plane);
        Ok(g_in.to_grid(&self.mask))
    }
}
