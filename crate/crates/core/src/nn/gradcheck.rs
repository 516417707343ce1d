//! Finite-difference verification of the network's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::geometry::DisplacementGrid;

use super::layers::Activation;
use super::net::DenoiserNet;
use super::tensor::{apply_pixel_mask, pixel_mask, Tensor};

const FD_STEP: f64 = 1e-4;
const LINEAR_FD_STEP: f64 = 1e-2;
/// Relative-error floor so coordinates with near-zero gradient are judged
/// against the finite-difference noise floor instead of each other.
const REL_FLOOR: f64 = 1e-6;

/// With the smooth activation the step balances truncation against rounding.
/// With the identity activation the loss is exactly quadratic along any
/// single coordinate — every weight enters each forward path once — so the
/// central difference has no truncation term and a larger step only divides
/// the floating-point noise.
fn probe_step(activation: Activation) -> f64 {
    match activation {
        Activation::Silu => FD_STEP,
        Activation::Identity => LINEAR_FD_STEP,
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates compared (parameters + input pixels).
    pub checked: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(REL_FLOOR);
    if a.abs() < 1e-12 && b.abs() < 1e-12 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Masked squared-error loss against a fixed target, the same shape of loss
/// training uses. Returns (loss, cotangent on the output).
fn loss_and_cotangent(
    out: &Tensor<f64>,
    target: &Tensor<f64>,
    plane: &[f64],
    m3: f64,
) -> (f64, Tensor<f64>) {
    let mut masked = out.clone();
    apply_pixel_mask(&mut masked, plane);
    let mut g = Tensor::zeros(out.channels(), out.height(), out.width());
    let mut loss = 0.0;
    for c in 0..out.channels() {
        let om = masked.plane(c);
        let tg = target.plane(c);
        let gp = g.plane_mut(c);
        for i in 0..om.len() {
            let d = om[i] - tg[i];
            loss += d * d;
            // chain through the output mask multiply
            gp[i] = 2.0 * d * plane[i] / m3;
        }
    }
    (loss / m3, g)
}

fn loss_at(
    net: &DenoiserNet<f64>,
    x: &Tensor<f64>,
    t: usize,
    target: &Tensor<f64>,
    plane: &[f64],
    m3: f64,
) -> f64 {
    let (out, _) = net.forward(x, t);
    let mut masked = out;
    apply_pixel_mask(&mut masked, plane);
    let mut loss = 0.0;
    for c in 0..masked.channels() {
        let om = masked.plane(c);
        let tg = target.plane(c);
        for i in 0..om.len() {
            let d = om[i] - tg[i];
            loss += d * d;
        }
    }
    loss / m3
}

/// Compares backpropagated parameter and input gradients against central
/// finite differences on float64 shadow weights: two random coordinates per
/// parameter tensor (64 for the standard layout) plus 32 masked input
/// coordinates. Returns the worst relative error.
pub fn grad_check(
    net: &DenoiserNet<f64>,
    probe: &DisplacementGrid,
    t: usize,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let step = probe_step(net.activation());
    let mask = probe.mask();
    let plane = pixel_mask::<f64>(mask);
    let m3 = (mask.len() * 3) as f64;

    let mut x = Tensor::<f64>::from_grid(probe);
    apply_pixel_mask(&mut x, &plane);

    // fixed masked target, standard-normal per element
    let mut target = Tensor::<f64>::zeros(3, x.height(), x.width());
    for v in target.data_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    apply_pixel_mask(&mut target, &plane);

    let (out, cache) = net.forward(&x, t);
    let (_, cot) = loss_and_cotangent(&out, &target, &plane, m3);
    let (g_params, g_x) = net.backward(&cache, &cot);

    let mut max_err = 0.0f64;
    let mut checked = 0;

    // two coordinates from every parameter tensor
    let entries: Vec<(usize, usize)> = net
        .params()
        .entries()
        .iter()
        .map(|e| (e.offset, e.len))
        .collect();
    let mut shadow = net.clone();
    for (offset, len) in entries {
        for _ in 0..2 {
            let k = offset + rng.gen_range(0..len);
            let orig = shadow.params().data()[k];
            shadow.params_mut().data_mut()[k] = orig + step;
            let lp = loss_at(&shadow, &x, t, &target, &plane, m3);
            shadow.params_mut().data_mut()[k] = orig - step;
            let lm = loss_at(&shadow, &x, t, &target, &plane, m3);
            shadow.params_mut().data_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * step);
            max_err = max_err.max(rel_err(g_params[k], fd));
            checked += 1;
        }
    }

    // masked input coordinates
    let r = mask.resolution();
    let pixels = mask.pixels();
    let mut xp = x.clone();
    for _ in 0..32 {
        let (px, py) = pixels[rng.gen_range(0..pixels.len())];
        let c = rng.gen_range(0..3usize);
        let k = (c * r + py) * r + px;
        let orig = xp.data()[k];
        xp.data_mut()[k] = orig + step;
        let lp = loss_at(net, &xp, t, &target, &plane, m3);
        xp.data_mut()[k] = orig - step;
        let lm = loss_at(net, &xp, t, &target, &plane, m3);
        xp.data_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * step);
        let k_grad = g_x.data()[k];
        max_err = max_err.max(rel_err(k_grad, fd));
        checked += 1;
    }

    GradCheckReport {
        max_rel_err: max_err,
        checked,
    }
}
