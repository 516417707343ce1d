//! Layer primitives with explicit forward and backward passes.
//!
//! Backward functions accumulate parameter gradients into caller-provided
//! slices so a whole step can target one flat gradient buffer.

use super::tensor::{Real, Tensor};

/// Pointwise nonlinearity. `Identity` exists so gradient checks can verify
/// the exact-linear case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

fn sigmoid<T: Real>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

fn act_value<T: Real>(a: Activation, v: T) -> T {
    match a {
        Activation::Silu => v * sigmoid(v),
        Activation::Identity => v,
    }
}

fn act_slope<T: Real>(a: Activation, v: T) -> T {
    match a {
        Activation::Silu => {
            let s = sigmoid(v);
            s * (T::ONE + v * (T::ONE - s))
        }
        Activation::Identity => T::ONE,
    }
}

pub fn act_forward<T: Real>(a: Activation, pre: &Tensor<T>) -> Tensor<T> {
    let mut out = pre.clone();
    for v in out.data_mut() {
        *v = act_value(a, *v);
    }
    out
}

/// dL/d(pre) from dL/d(act), given the cached pre-activation values.
pub fn act_backward<T: Real>(a: Activation, pre: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    assert!(pre.same_shape(g));
    let mut out = g.clone();
    for (gv, pv) in out.data_mut().iter_mut().zip(pre.data()) {
        *gv *= act_slope(a, *pv);
    }
    out
}

pub fn act_forward_vec<T: Real>(a: Activation, pre: &[T]) -> Vec<T> {
    pre.iter().map(|&v| act_value(a, v)).collect()
}

pub fn act_backward_vec<T: Real>(a: Activation, pre: &[T], g: &[T]) -> Vec<T> {
    pre.iter()
        .zip(g)
        .map(|(&p, &gv)| gv * act_slope(a, p))
        .collect()
}

/// Copies each channel into a buffer with a one-pixel zero border.
fn pad_channels<T: Real>(input: &Tensor<T>) -> Vec<T> {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::ZERO; c * ph * pw];
    for ci in 0..c {
        let plane = input.plane(ci);
        for y in 0..h {
            let dst = (ci * ph + y + 1) * pw + 1;
            out[dst..dst + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
        }
    }
    out
}

/// 3×3 convolution with stride 1 and same-size zero padding.
/// Weights are laid out `[cout][cin][ky][kx]`.
pub fn conv3x3_forward<T: Real>(input: &Tensor<T>, w: &[T], b: &[T], cout: usize) -> Tensor<T> {
    let (cin, h, wd) = (input.channels(), input.height(), input.width());
    debug_assert_eq!(w.len(), cout * cin * 9);
    debug_assert_eq!(b.len(), cout);
    let padded = pad_channels(input);
    let pw = wd + 2;
    let ph = h + 2;
    let mut out = Tensor::zeros(cout, h, wd);
    for co in 0..cout {
        let plane = out.plane_mut(co);
        for v in plane.iter_mut() {
            *v = b[co];
        }
        for ci in 0..cin {
            let wbase = (co * cin + ci) * 9;
            let pbase = ci * ph * pw;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[wbase + ky * 3 + kx];
                    for y in 0..h {
                        let src = &padded[pbase + (y + ky) * pw + kx..][..wd];
                        let dst = &mut plane[y * wd..(y + 1) * wd];
                        for i in 0..wd {
                            dst[i] += wv * src[i];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv3x3_forward`]: accumulates weight/bias gradients
/// into `g_w`/`g_b` and returns the input gradient.
pub fn conv3x3_backward<T: Real>(
    input: &Tensor<T>,
    w: &[T],
    g_out: &Tensor<T>,
    g_w: &mut [T],
    g_b: &mut [T],
) -> Tensor<T> {
    let (cin, h, wd) = (input.channels(), input.height(), input.width());
    let cout = g_out.channels();
    debug_assert_eq!(w.len(), cout * cin * 9);
    debug_assert_eq!(g_w.len(), cout * cin * 9);
    debug_assert_eq!(g_b.len(), cout);
    debug_assert_eq!(g_out.height(), h);
    debug_assert_eq!(g_out.width(), wd);
    let pin = pad_channels(input);
    let pgo = pad_channels(g_out);
    let pw = wd + 2;
    let ph = h + 2;

    for co in 0..cout {
        let mut acc = T::ZERO;
        for v in g_out.plane(co) {
            acc += *v;
        }
        g_b[co] += acc;
    }

    for co in 0..cout {
        let gplane = g_out.plane(co);
        for ci in 0..cin {
            let wbase = (co * cin + ci) * 9;
            let pbase = ci * ph * pw;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = T::ZERO;
                    for y in 0..h {
                        let gr = &gplane[y * wd..(y + 1) * wd];
                        let ir = &pin[pbase + (y + ky) * pw + kx..][..wd];
                        for i in 0..wd {
                            acc += gr[i] * ir[i];
                        }
                    }
                    g_w[wbase + ky * 3 + kx] += acc;
                }
            }
        }
    }

    // g_in = correlation of g_out with the kernel flipped in both axes.
    let mut g_in = Tensor::zeros(cin, h, wd);
    for ci in 0..cin {
        let plane = g_in.plane_mut(ci);
        for co in 0..cout {
            let wbase = (co * cin + ci) * 9;
            let pbase = co * ph * pw;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[wbase + (2 - ky) * 3 + (2 - kx)];
                    for y in 0..h {
                        let src = &pgo[pbase + (y + ky) * pw + kx..][..wd];
                        let dst = &mut plane[y * wd..(y + 1) * wd];
                        for i in 0..wd {
                            dst[i] += wv * src[i];
                        }
                    }
                }
            }
        }
    }
    g_in
}

/// 2×2 average pooling; spatial dims must be even.
pub fn avgpool2_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let q = T::from_f64(0.25);
    let mut out = Tensor::zeros(c, oh, ow);
    for ci in 0..c {
        let src = input.plane(ci);
        let dst = out.plane_mut(ci);
        for y in 0..oh {
            for x in 0..ow {
                let p = 2 * y * w + 2 * x;
                dst[y * ow + x] = q * (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]);
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Real>(g_out: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = (g_out.channels(), g_out.height(), g_out.width());
    let (h, w) = (oh * 2, ow * 2);
    let q = T::from_f64(0.25);
    let mut g_in = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let src = g_out.plane(ci);
        let dst = g_in.plane_mut(ci);
        for y in 0..oh {
            for x in 0..ow {
                let g = q * src[y * ow + x];
                let p = 2 * y * w + 2 * x;
                dst[p] = g;
                dst[p + 1] = g;
                dst[p + w] = g;
                dst[p + w + 1] = g;
            }
        }
    }
    g_in
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor::zeros(c, oh, ow);
    for ci in 0..c {
        let src = input.plane(ci);
        let dst = out.plane_mut(ci);
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                let p = 2 * y * ow + 2 * x;
                dst[p] = v;
                dst[p + 1] = v;
                dst[p + ow] = v;
                dst[p + ow + 1] = v;
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(g_out: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = (g_out.channels(), g_out.height(), g_out.width());
    assert!(oh % 2 == 0 && ow % 2 == 0);
    let (h, w) = (oh / 2, ow / 2);
    let mut g_in = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let src = g_out.plane(ci);
        let dst = g_in.plane_mut(ci);
        for y in 0..h {
            for x in 0..w {
                let p = 2 * y * ow + 2 * x;
                dst[y * w + x] = src[p] + src[p + 1] + src[p + ow] + src[p + ow + 1];
            }
        }
    }
    g_in
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.height(), b.height());
    assert_eq!(a.width(), b.width());
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(a.channels() + b.channels(), a.height(), a.width(), data)
}

pub fn split_channels<T: Real>(t: &Tensor<T>, c_first: usize) -> (Tensor<T>, Tensor<T>) {
    assert!(c_first <= t.channels());
    let n = t.height() * t.width();
    let (a, b) = t.data().split_at(c_first * n);
    (
        Tensor::from_vec(c_first, t.height(), t.width(), a.to_vec()),
        Tensor::from_vec(t.channels() - c_first, t.height(), t.width(), b.to_vec()),
    )
}

/// Fully connected layer; weights laid out `[nout][nin]`.
pub fn dense_forward<T: Real>(input: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let nin = input.len();
    let nout = b.len();
    debug_assert_eq!(w.len(), nin * nout);
    let mut out = Vec::with_capacity(nout);
    for o in 0..nout {
        let mut acc = b[o];
        let row = &w[o * nin..(o + 1) * nin];
        for i in 0..nin {
            acc += row[i] * input[i];
        }
        out.push(acc);
    }
    out
}

/// Accumulates dense-layer gradients; `g_in` is accumulated, not overwritten.
pub fn dense_backward<T: Real>(
    input: &[T],
    w: &[T],
    g_out: &[T],
    g_w: &mut [T],
    g_b: &mut [T],
    g_in: &mut [T],
) {
    let nin = input.len();
    let nout = g_out.len();
    debug_assert_eq!(w.len(), nin * nout);
    debug_assert_eq!(g_w.len(), nin * nout);
    debug_assert_eq!(g_b.len(), nout);
    debug_assert_eq!(g_in.len(), nin);
    for o in 0..nout {
        let g = g_out[o];
        g_b[o] += g;
        let wrow = &w[o * nin..(o + 1) * nin];
        let grow = &mut g_w[o * nin..(o + 1) * nin];
        for i in 0..nin {
            grow[i] += g * input[i];
            g_in[i] += wrow[i] * g;
        }
    }
}

/// Adds a per-channel bias to every pixel of each plane.
pub fn add_channel_bias<T: Real>(t: &mut Tensor<T>, bias: &[T]) {
    debug_assert_eq!(bias.len(), t.channels());
    for (c, &bv) in bias.iter().enumerate() {
        for v in t.plane_mut(c) {
            *v += bv;
        }
    }
}

/// Per-channel sums; the gradient of [`add_channel_bias`] wrt the bias.
pub fn channel_sums<T: Real>(g: &Tensor<T>) -> Vec<T> {
    (0..g.channels())
        .map(|c| {
            let mut acc = T::ZERO;
            for v in g.plane(c) {
                acc += *v;
            }
            acc
        })
        .collect()
}

/// Sinusoidal embedding of a diffusion step index: `dim/2` log-spaced
/// frequencies from 1 down to 1e-4, sines then cosines.
pub fn time_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    assert!(dim >= 4 && dim % 2 == 0);
    let half = dim / 2;
    let mut out = vec![T::ZERO; dim];
    for i in 0..half {
        let freq = (-(1e4f64.ln()) * i as f64 / (half - 1) as f64).exp();
        let ang = t as f64 * freq;
        out[i] = T::from_f64(ang.sin());
        out[half + i] = T::from_f64(ang.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha12Rng) -> Tensor<f64> {
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(c, h, w, data)
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_with_center_one_kernel_is_identity_plus_bias() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = random_tensor(2, 5, 4, &mut rng);
        // one output channel copying input channel 1
        let mut w = vec![0.0; 2 * 9];
        w[9 + 4] = 1.0;
        let out = conv3x3_forward(&x, &w, &[0.25], 1);
        for y in 0..5 {
            for xx in 0..4 {
                let expect = x.plane(1)[y * 4 + xx] + 0.25;
                assert!((out.plane(0)[y * 4 + xx] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (cin, cout, h, wd) = (3, 2, 6, 5);
        let x = random_tensor(cin, h, wd, &mut rng);
        let w: Vec<f64> = (0..cout * cin * 9)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = conv3x3_forward(&x, &w, &b, cout);
        for co in 0..cout {
            for y in 0..h as isize {
                for xx in 0..wd as isize {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (sy, sx) = (y + ky, xx + kx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                let wv = w[(co * cin + ci) * 9 + ((ky + 1) * 3 + kx + 1) as usize];
                                acc += wv * x.plane(ci)[sy as usize * wd + sx as usize];
                            }
                        }
                    }
                    let got = out.plane(co)[y as usize * wd + xx as usize];
                    assert!((got - acc).abs() < 1e-12, "({co},{y},{xx})");
                }
            }
        }
    }

    #[test]
    fn conv_input_gradient_is_the_adjoint() {
        // <conv(x) - b, y> == <x, conv_backward_input(y)> for zero bias
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let (cin, cout) = (3, 4);
        let x = random_tensor(cin, 6, 6, &mut rng);
        let y = random_tensor(cout, 6, 6, &mut rng);
        let w: Vec<f64> = (0..cout * cin * 9)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let out = conv3x3_forward(&x, &w, &vec![0.0; cout], cout);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; cout];
        let gx = conv3x3_backward(&x, &w, &y, &mut gw, &mut gb);
        assert!((dot(&out, &y) - dot(&x, &gx)).abs() < 1e-10);
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let (cin, cout) = (2, 2);
        let x = random_tensor(cin, 4, 4, &mut rng);
        let cot = random_tensor(cout, 4, 4, &mut rng);
        let mut w: Vec<f64> = (0..cout * cin * 9)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; cout];
        conv3x3_backward(&x, &w, &cot, &mut gw, &mut gb);
        let h = 1e-6;
        for k in [0usize, 5, 9, 17, 35] {
            let orig = w[k];
            w[k] = orig + h;
            let lp = dot(&conv3x3_forward(&x, &w, &b, cout), &cot);
            w[k] = orig - h;
            let lm = dot(&conv3x3_forward(&x, &w, &b, cout), &cot);
            w[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gw[k]).abs() < 1e-7, "coord {k}: {fd} vs {}", gw[k]);
        }
        let fd_b: f64 = cot.plane(0).iter().sum();
        assert!((gb[0] - fd_b).abs() < 1e-10);
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = random_tensor(2, 6, 4, &mut rng);
        let y = random_tensor(2, 3, 2, &mut rng);
        assert!((dot(&avgpool2_forward(&x), &y) - dot(&x, &avgpool2_backward(&y))).abs() < 1e-12);
        let u = random_tensor(2, 6, 4, &mut rng);
        let v = random_tensor(2, 12, 8, &mut rng);
        assert!((dot(&upsample2_forward(&u), &v) - dot(&u, &upsample2_backward(&v))).abs() < 1e-12);
    }

    #[test]
    fn silu_values_and_slope() {
        let t = Tensor::from_vec(1, 1, 3, vec![0.0f64, 10.0, -10.0]);
        let out = act_forward(Activation::Silu, &t);
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 10.0).abs() < 1e-3);
        assert!(out.data()[2].abs() < 1e-3);
        // slope at 0 is 1/2
        let g = act_backward(
            Activation::Silu,
            &t,
            &Tensor::from_vec(1, 1, 3, vec![1.0; 3]),
        );
        assert!((g.data()[0] - 0.5).abs() < 1e-15);
        // finite-difference slope check at a generic point
        let h = 1e-6;
        let p = Tensor::from_vec(1, 1, 1, vec![0.37f64]);
        let pp = Tensor::from_vec(1, 1, 1, vec![0.37f64 + h]);
        let pm = Tensor::from_vec(1, 1, 1, vec![0.37f64 - h]);
        let fd = (act_forward(Activation::Silu, &pp).data()[0]
            - act_forward(Activation::Silu, &pm).data()[0])
            / (2.0 * h);
        let an = act_backward(Activation::Silu, &p, &Tensor::from_vec(1, 1, 1, vec![1.0]));
        assert!((fd - an.data()[0]).abs() < 1e-9);
    }

    #[test]
    fn dense_layer_matches_manual_product_and_gradients() {
        let input = [0.5f64, -1.0, 2.0];
        let w = [1.0f64, 2.0, 3.0, -1.0, 0.5, 0.25];
        let b = [0.1f64, -0.2];
        let out = dense_forward(&input, &w, &b);
        assert!((out[0] - (0.5 - 2.0 + 6.0 + 0.1)).abs() < 1e-15);
        assert!((out[1] - (-0.5 - 0.5 + 0.5 - 0.2)).abs() < 1e-15);
        let g_out = [1.0f64, -2.0];
        let mut gw = vec![0.0; 6];
        let mut gb = vec![0.0; 2];
        let mut gi = vec![0.0; 3];
        dense_backward(&input, &w, &g_out, &mut gw, &mut gb, &mut gi);
        assert_eq!(gb, vec![1.0, -2.0]);
        assert!((gw[0] - 0.5).abs() < 1e-15);
        assert!((gw[3] - -1.0).abs() < 1e-15);
        // g_in = Wᵀ g_out
        assert!((gi[0] - (1.0 + 2.0)).abs() < 1e-15);
        assert!((gi[2] - (3.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let a = random_tensor(2, 3, 3, &mut rng);
        let b = random_tensor(3, 3, 3, &mut rng);
        let c = concat_channels(&a, &b);
        assert_eq!(c.channels(), 5);
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!(a.data(), a2.data());
        assert_eq!(b.data(), b2.data());
    }

    #[test]
    fn time_embedding_layout() {
        let e = time_embedding::<f64>(0, 8);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        let e = time_embedding::<f64>(17, 8);
        for i in 0..4 {
            let freq = (-(1e4f64.ln()) * i as f64 / 3.0).exp();
            assert!((e[i] - (17.0 * freq).sin()).abs() < 1e-15);
            assert!((e[4 + i] - (17.0 * freq).cos()).abs() < 1e-15);
        }
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn channel_bias_and_sums() {
        let mut t = Tensor::<f64>::zeros(2, 2, 2);
        add_channel_bias(&mut t, &[1.0, -2.0]);
        assert_eq!(t.plane(0), &[1.0; 4]);
        assert_eq!(t.plane(1), &[-2.0; 4]);
        assert_eq!(channel_sums(&t), vec![4.0, -8.0]);
    }
}
