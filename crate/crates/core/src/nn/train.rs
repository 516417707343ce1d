//! Noise-prediction training loop with adaptive moments and EMA weights.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::diffusion::{forward_diffuse, sample_noise, VarianceSchedule};
use crate::geometry::{ClothTemplate, DisplacementGrid};

use super::checkpoint::Checkpoint;
use super::net::{DenoiserNet, NetSpec};
use super::tensor::{apply_pixel_mask, pixel_mask, Tensor};
use super::NnError;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// EMA decay for the evaluation weights; 0 keeps them equal to the raw
    /// weights.
    pub ema_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 2e-4,
            iterations: 5000,
            seed: 0,
            ema_decay: 0.999,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::BadBatch);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::BadLearningRate);
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(NnError::BadEmaDecay(self.ema_decay));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.eps as f32,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = (1.0 - (self.beta1 as f64).powi(self.step as i32)) as f32;
        let bc2 = (1.0 - (self.beta2 as f64).powi(self.step as i32)) as f32;
        let lr = lr as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of the weight vector.
pub struct Ema {
    decay: f32,
    weights: Vec<f32>,
}

impl Ema {
    pub fn new(init: &[f32], decay: f64) -> Self {
        Self {
            decay: decay as f32,
            weights: init.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[f32]) {
        if self.decay == 0.0 {
            self.weights.copy_from_slice(params);
            return;
        }
        for (w, p) in self.weights.iter_mut().zip(params) {
            *w = self.decay * *w + (1.0 - self.decay) * *p;
        }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// One optimizer step on a batch of clean grids (in grid units, i.e. already
/// divided by the value scale). Draws a step index and noise per item,
/// forms the corrupted grid, and regresses the masked noise residual.
/// Returns (mean loss, L2 norm of the accumulated parameter gradient).
#[allow(clippy::too_many_arguments)]
pub fn training_step<R: Rng + ?Sized>(
    net: &mut DenoiserNet<f32>,
    adam: &mut Adam,
    ema: &mut Ema,
    batch: &[&DisplacementGrid],
    sched: &VarianceSchedule,
    lr: f64,
    rng: &mut R,
) -> Result<(f64, f64), NnError> {
    assert!(!batch.is_empty());
    let mask = batch[0].mask();
    for g in batch {
        if !g.same_mask(batch[0]) {
            return Err(NnError::MaskMismatch);
        }
    }
    DenoiserNet::<f32>::check_resolution(mask.resolution())?;
    let plane = pixel_mask::<f32>(mask);
    let m3 = (mask.len() * 3) as f64;
    let inv_total = 1.0 / (m3 * batch.len() as f64);

    let mut total_grads = vec![0.0f32; net.num_params()];
    let mut loss_sum = 0.0f64;
    for x0 in batch {
        let t = rng.gen_range(1..=sched.t_max());
        let eps = sample_noise(mask, rng);
        let x_t = forward_diffuse(sched, x0, t, &eps)?;
        let mut input = Tensor::<f32>::from_grid(&x_t);
        apply_pixel_mask(&mut input, &plane);
        let (mut out, cache) = net.forward(&input, t);
        apply_pixel_mask(&mut out, &plane);
        let target = Tensor::<f32>::from_grid(&eps);

        let mut g_out = Tensor::<f32>::zeros(3, out.height(), out.width());
        for c in 0..3 {
            let op = out.plane(c);
            let tp = target.plane(c);
            let gp = g_out.plane_mut(c);
            for i in 0..op.len() {
                let d = (op[i] - tp[i]) as f64;
                loss_sum += d * d;
                gp[i] = (2.0 * d * inv_total) as f32 * plane[i];
            }
        }
        let (g_params, _) = net.backward(&cache, &g_out);
        for (acc, g) in total_grads.iter_mut().zip(&g_params) {
            *acc += *g;
        }
    }

    let loss = loss_sum / (m3 * batch.len() as f64);
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss {
            iteration: adam.step_count() + 1,
            loss,
        });
    }
    let grad_norm = total_grads
        .iter()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    adam.update(net.params_mut().data_mut(), &total_grads, lr);
    ema.update(net.params().data());
    Ok((loss, grad_norm))
}

/// 95th percentile (nearest rank) of per-pixel displacement magnitudes over
/// a dataset, floored at 1e-6. This is the per-template value scale that
/// normalizes grids before they enter the network.
pub fn displacement_scale(grids: &[DisplacementGrid]) -> f64 {
    let mut mags: Vec<f64> = Vec::new();
    for g in grids {
        let masked = g.to_masked_vec();
        for p in masked.chunks_exact(3) {
            mags.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
    }
    if mags.is_empty() {
        return 1e-6;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let idx = ((mags.len() - 1) as f64 * 0.95).round() as usize;
    mags[idx].max(1e-6)
}

#[derive(Clone, Debug)]
pub struct LossRow {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub loss_curve: Vec<LossRow>,
}

/// Writes the loss curve as `iter,loss,grad_norm`.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<(), NnError> {
    let mut out = Vec::new();
    out.extend_from_slice(b"iter,loss,grad_norm\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.iter, r.loss, r.grad_norm).expect("vec write");
    }
    std::fs::write(path, out).map_err(crate::io::IoError::from)?;
    Ok(())
}

/// Trains a fresh network on clean displacement grids (meters). Grids are
/// divided by the dataset's 95th-percentile magnitude before entering the
/// chain; the resulting scale is stored in the checkpoint. The returned
/// checkpoint carries both raw and EMA weights, with EMA intended for
/// evaluation.
pub fn train(
    dataset: &[DisplacementGrid],
    cfg: &TrainConfig,
    spec: &NetSpec,
    sched: &VarianceSchedule,
    template: &ClothTemplate,
) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    spec.validate()?;
    if dataset.len() < 2 {
        return Err(NnError::TooFewFrames(dataset.len()));
    }
    let mask = template.atlas().mask();
    for g in dataset {
        if !(std::sync::Arc::ptr_eq(g.mask(), mask) || **g.mask() == **mask) {
            return Err(NnError::MaskMismatch);
        }
    }
    DenoiserNet::<f32>::check_resolution(mask.resolution())?;

    let scale = displacement_scale(dataset);
    let normalized: Vec<DisplacementGrid> = dataset
        .iter()
        .map(|g| {
            let mut n = g.clone();
            n.scale_in_place(1.0 / scale);
            n
        })
        .collect();

    let mut net = DenoiserNet::<f32>::new(*spec, cfg.seed)?;
    let mut adam = Adam::new(net.num_params(), cfg);
    let mut ema = Ema::new(net.params().data(), cfg.ema_decay);
    // distinct stream from weight initialization
    let mut rng = ChaCha12Rng::seed_from_u64(
        cfg.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x1234_5678),
    );

    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let batch: Vec<&DisplacementGrid> = (0..cfg.batch_size)
            .map(|_| &normalized[rng.gen_range(0..normalized.len())])
            .collect();
        let (loss, grad_norm) = training_step(
            &mut net,
            &mut adam,
            &mut ema,
            &batch,
            sched,
            cfg.learning_rate,
            &mut rng,
        )?;
        loss_curve.push(LossRow {
            iter: it,
            loss,
            grad_norm,
        });
    }

    let checkpoint = Checkpoint::from_training(
        &net,
        ema.weights(),
        sched,
        template,
        cfg.iterations as u64,
        scale,
    );
    Ok(TrainOutcome {
        checkpoint,
        loss_curve,
    })
}

/// Mean masked squared noise residual over held-out grids (meters): for
/// each frame and draw, corrupts the normalized frame at a random step and
/// measures ‖ε − ε̂‖² / (3·|mask|). A predictor that always returns zero
/// scores ≈ 1.
pub fn epsilon_mse(
    net: &DenoiserNet<f32>,
    value_scale: f64,
    grids: &[DisplacementGrid],
    sched: &VarianceSchedule,
    draws_per_frame: usize,
    seed: u64,
) -> Result<f64, NnError> {
    if grids.is_empty() || draws_per_frame == 0 {
        return Ok(0.0);
    }
    if !(value_scale > 0.0 && value_scale.is_finite()) {
        return Err(NnError::BadValueScale(value_scale));
    }
    let mask = grids[0].mask();
    DenoiserNet::<f32>::check_resolution(mask.resolution())?;
    let plane = pixel_mask::<f32>(mask);
    let m3 = (mask.len() * 3) as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut total = 0.0f64;
    for g in grids {
        if !g.same_mask(&grids[0]) {
            return Err(NnError::MaskMismatch);
        }
        let mut x0 = g.clone();
        x0.scale_in_place(1.0 / value_scale);
        for _ in 0..draws_per_frame {
            let t = rng.gen_range(1..=sched.t_max());
            let eps = sample_noise(mask, &mut rng);
            let x_t = forward_diffuse(sched, &x0, t, &eps)?;
            let mut input = Tensor::<f32>::from_grid(&x_t);
            apply_pixel_mask(&mut input, &plane);
            let (mut out, _) = net.forward(&input, t);
            apply_pixel_mask(&mut out, &plane);
            let target = Tensor::<f32>::from_grid(&eps);
            let mut item = 0.0f64;
            for (o, e) in out.data().iter().zip(target.data()) {
                let d = (*o - *e) as f64;
                item += d * d;
            }
            total += item / m3;
        }
    }
    Ok(total / (grids.len() * draws_per_frame) as f64)
}
