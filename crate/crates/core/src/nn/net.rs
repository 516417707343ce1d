//! The noise-prediction network: a three-level convolutional
//! encoder–decoder with skip connections and a per-block step-embedding
//! channel bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::layers::{
    act_backward, act_backward_vec, act_forward, act_forward_vec, add_channel_bias,
    avgpool2_backward, avgpool2_forward, channel_sums, concat_channels, conv3x3_backward,
    conv3x3_forward, dense_backward, dense_forward, split_channels, time_embedding,
    upsample2_backward, upsample2_forward, Activation,
};
use super::tensor::{Real, Tensor};
use super::NnError;

pub const INPUT_CHANNELS: usize = 3;

/// Spatial shrink factor across the encoder; inputs must be divisible by it.
const DOWNSAMPLE: usize = 8;

const BLOCK_NAMES: [&str; 7] = ["enc0", "enc1", "enc2", "bottleneck", "dec2", "dec1", "dec0"];

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    /// Channel widths of the three encoder levels.
    pub widths: [usize; 3],
    /// Dimension of the sinusoidal step embedding.
    pub embed_dim: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
            embed_dim: 64,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths.iter().any(|&w| w == 0) {
            return Err(NnError::BadWidths);
        }
        if self.embed_dim < 4 || self.embed_dim % 2 != 0 {
            return Err(NnError::BadEmbedDim(self.embed_dim));
        }
        Ok(())
    }

    pub fn downsample_factor() -> usize {
        DOWNSAMPLE
    }
}

/// One named parameter tensor inside the flat parameter buffer.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Flat parameter storage with a name/shape registry, so the optimizer,
/// EMA, and checkpoints all see one contiguous buffer.
#[derive(Clone, Debug)]
pub struct ParamVec<T> {
    data: Vec<T>,
    entries: Vec<ParamEntry>,
}

impl<T: Real> ParamVec<T> {
    fn new() -> Self {
        Self {
            data: Vec::new(),
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, shape: &[usize]) -> usize {
        let len: usize = shape.iter().product();
        let entry = ParamEntry {
            name: name.to_string(),
            offset: self.data.len(),
            len,
            shape: shape.to_vec(),
        };
        self.data.resize(self.data.len() + len, T::ZERO);
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn slice(&self, idx: usize) -> &[T] {
        let e = &self.entries[idx];
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn slice_mut(&mut self, idx: usize) -> &mut [T] {
        let e = &self.entries[idx];
        &mut self.data[e.offset..e.offset + e.len]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// Entry indices and channel counts for one conv block.
#[derive(Clone, Debug)]
struct BlockSlots {
    conv_w: usize,
    conv_b: usize,
    time_w: usize,
    time_b: usize,
    cout: usize,
}

#[derive(Clone, Debug)]
pub struct DenoiserNet<T> {
    spec: NetSpec,
    activation: Activation,
    params: ParamVec<T>,
    trunk_w: usize,
    trunk_b: usize,
    blocks: Vec<BlockSlots>,
    head_w: usize,
    head_b: usize,
}

/// Intermediate values of one forward pass, consumed by [`DenoiserNet::backward`].
pub struct NetCache<T> {
    t: usize,
    x: Tensor<T>,
    conv_inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    d0: Tensor<T>,
    emb_raw: Vec<T>,
    trunk_pre: Vec<T>,
    emb: Vec<T>,
}

impl<T> NetCache<T> {
    pub fn t(&self) -> usize {
        self.t
    }
}

impl<T: Real> DenoiserNet<T> {
    /// Builds the parameter layout with all values zero.
    pub fn zeroed(spec: NetSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let [c0, c1, c2] = spec.widths;
        let chans = [
            (INPUT_CHANNELS, c0),
            (c0, c1),
            (c1, c2),
            (c2, c2),
            (2 * c2, c1),
            (2 * c1, c0),
            (2 * c0, c0),
        ];
        let mut params = ParamVec::new();
        let trunk_w = params.push("time_trunk.w", &[spec.embed_dim, spec.embed_dim]);
        let trunk_b = params.push("time_trunk.b", &[spec.embed_dim]);
        let mut blocks = Vec::with_capacity(7);
        for (i, &(cin, cout)) in chans.iter().enumerate() {
            let name = BLOCK_NAMES[i];
            blocks.push(BlockSlots {
                conv_w: params.push(&format!("{name}.conv.w"), &[cout, cin, 3, 3]),
                conv_b: params.push(&format!("{name}.conv.b"), &[cout]),
                time_w: params.push(&format!("{name}.time.w"), &[cout, spec.embed_dim]),
                time_b: params.push(&format!("{name}.time.b"), &[cout]),
                cout,
            });
        }
        let head_w = params.push("head.w", &[INPUT_CHANNELS, c0, 3, 3]);
        let head_b = params.push("head.b", &[INPUT_CHANNELS]);
        Ok(Self {
            spec,
            activation: Activation::Silu,
            params,
            trunk_w,
            trunk_b,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Random initialization: uniform He fan-in scaling for weights, zero
    /// biases, damped step-projection weights so the step signal starts
    /// small.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut fill = |params: &mut ParamVec<T>, idx: usize, fan_in: usize, damp: f64| {
            let limit = damp * (6.0 / fan_in as f64).sqrt();
            let rng = &mut rng;
            for v in params.slice_mut(idx) {
                *v = T::from_f64(rng.gen_range(-limit..limit));
            }
        };
        let embed = spec.embed_dim;
        fill(&mut net.params, net.trunk_w, embed, 1.0);
        let blocks = net.blocks.clone();
        let [c0, c1, c2] = spec.widths;
        let cins = [INPUT_CHANNELS, c0, c1, c2, 2 * c2, 2 * c1, 2 * c0];
        for (b, &cin) in blocks.iter().zip(&cins) {
            fill(&mut net.params, b.conv_w, cin * 9, 1.0);
            fill(&mut net.params, b.time_w, embed, 0.1);
        }
        fill(&mut net.params, net.head_w, c0 * 9, 1.0);
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Swaps the nonlinearity; `Identity` makes the whole net linear in its
    /// input, which gradient checks exploit.
    pub fn set_activation(&mut self, a: Activation) {
        self.activation = a;
    }

    pub fn params(&self) -> &ParamVec<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVec<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.data.len()
    }

    /// Checks that a grid edge length is compatible with the encoder.
    pub fn check_resolution(resolution: usize) -> Result<(), NnError> {
        if resolution == 0 || resolution % DOWNSAMPLE != 0 {
            return Err(NnError::BadResolution(resolution, DOWNSAMPLE));
        }
        Ok(())
    }

    fn run_block(&self, idx: usize, input: &Tensor<T>, bias: &[T]) -> (Tensor<T>, Tensor<T>) {
        let b = &self.blocks[idx];
        let mut pre = conv3x3_forward(
            input,
            self.params.slice(b.conv_w),
            self.params.slice(b.conv_b),
            b.cout,
        );
        add_channel_bias(&mut pre, bias);
        let act = act_forward(self.activation, &pre);
        (pre, act)
    }

    /// Full forward pass. The input is used as-is; masking is the caller's
    /// contract. Panics if the spatial dims are not multiples of 8.
    pub fn forward(&self, x: &Tensor<T>, t: usize) -> (Tensor<T>, NetCache<T>) {
        assert_eq!(x.channels(), INPUT_CHANNELS);
        assert!(
            x.height() % DOWNSAMPLE == 0 && x.width() % DOWNSAMPLE == 0,
            "input {}x{} not divisible by {DOWNSAMPLE}",
            x.height(),
            x.width()
        );
        let emb_raw = time_embedding::<T>(t, self.spec.embed_dim);
        let trunk_pre = dense_forward(
            &emb_raw,
            self.params.slice(self.trunk_w),
            self.params.slice(self.trunk_b),
        );
        let emb = act_forward_vec(self.activation, &trunk_pre);
        let biases: Vec<Vec<T>> = self
            .blocks
            .iter()
            .map(|b| {
                dense_forward(
                    &emb,
                    self.params.slice(b.time_w),
                    self.params.slice(b.time_b),
                )
            })
            .collect();

        let mut pre = Vec::with_capacity(7);
        let mut conv_inputs = Vec::with_capacity(7);

        let (pre0, s0) = self.run_block(0, x, &biases[0]);
        pre.push(pre0);
        conv_inputs.push(x.clone());
        let p0 = avgpool2_forward(&s0);
        let (pre1, s1) = self.run_block(1, &p0, &biases[1]);
        pre.push(pre1);
        conv_inputs.push(p0);
        let p1 = avgpool2_forward(&s1);
        let (pre2, s2) = self.run_block(2, &p1, &biases[2]);
        pre.push(pre2);
        conv_inputs.push(p1);
        let p2 = avgpool2_forward(&s2);
        let (pre3, bb) = self.run_block(3, &p2, &biases[3]);
        pre.push(pre3);
        conv_inputs.push(p2);

        let cat2 = concat_channels(&upsample2_forward(&bb), &s2);
        let (pre4, d2) = self.run_block(4, &cat2, &biases[4]);
        pre.push(pre4);
        conv_inputs.push(cat2);
        let cat1 = concat_channels(&upsample2_forward(&d2), &s1);
        let (pre5, d1) = self.run_block(5, &cat1, &biases[5]);
        pre.push(pre5);
        conv_inputs.push(cat1);
        let cat0 = concat_channels(&upsample2_forward(&d1), &s0);
        let (pre6, d0) = self.run_block(6, &cat0, &biases[6]);
        pre.push(pre6);
        conv_inputs.push(cat0);

        let out = conv3x3_forward(
            &d0,
            self.params.slice(self.head_w),
            self.params.slice(self.head_b),
            INPUT_CHANNELS,
        );
        let cache = NetCache {
            t,
            x: x.clone(),
            conv_inputs,
            pre,
            d0,
            emb_raw,
            trunk_pre,
            emb,
        };
        (out, cache)
    }

    /// Two disjoint mutable parameter-gradient slices out of the flat buffer.
    fn grad_pair<'a>(
        &self,
        buf: &'a mut [T],
        first: usize,
        second: usize,
    ) -> (&'a mut [T], &'a mut [T]) {
        let a = &self.params.entries[first];
        let b = &self.params.entries[second];
        debug_assert!(a.offset + a.len <= b.offset);
        let (lo, hi) = buf.split_at_mut(b.offset);
        (&mut lo[a.offset..a.offset + a.len], &mut hi[..b.len])
    }

    /// Backpropagates a cotangent on the output through the cached pass.
    /// Returns the flat parameter gradient and the input gradient.
    pub fn backward(&self, cache: &NetCache<T>, g_out: &Tensor<T>) -> (Vec<T>, Tensor<T>) {
        let act = self.activation;
        let mut grads = vec![T::ZERO; self.params.data.len()];
        let mut g_emb = vec![T::ZERO; self.spec.embed_dim];

        let g_d0 = {
            let (gw, gb) = self.grad_pair(&mut grads, self.head_w, self.head_b);
            conv3x3_backward(&cache.d0, self.params.slice(self.head_w), g_out, gw, gb)
        };

        // One conv block in reverse; returns the gradient on the block input.
        let back_block = |grads: &mut Vec<T>, g_emb: &mut Vec<T>, idx: usize, g_act: &Tensor<T>| {
            let b = &self.blocks[idx];
            let g_pre = act_backward(act, &cache.pre[idx], g_act);
            let g_bias = channel_sums(&g_pre);
            {
                let (gtw, gtb) = self.grad_pair(grads, b.time_w, b.time_b);
                dense_backward(
                    &cache.emb,
                    self.params.slice(b.time_w),
                    &g_bias,
                    gtw,
                    gtb,
                    g_emb,
                );
            }
            let (gw, gb) = self.grad_pair(grads, b.conv_w, b.conv_b);
            conv3x3_backward(
                &cache.conv_inputs[idx],
                self.params.slice(b.conv_w),
                &g_pre,
                gw,
                gb,
            )
        };

        let [c0, c1, c2] = self.spec.widths;

        let g_cat0 = back_block(&mut grads, &mut g_emb, 6, &g_d0);
        let (g_u0, g_s0_skip) = split_channels(&g_cat0, c0);
        let g_d1 = upsample2_backward(&g_u0);

        let g_cat1 = back_block(&mut grads, &mut g_emb, 5, &g_d1);
        let (g_u1, g_s1_skip) = split_channels(&g_cat1, c1);
        let g_d2 = upsample2_backward(&g_u1);

        let g_cat2 = back_block(&mut grads, &mut g_emb, 4, &g_d2);
        let (g_u2, g_s2_skip) = split_channels(&g_cat2, c2);
        let g_bb = upsample2_backward(&g_u2);

        let g_p2 = back_block(&mut grads, &mut g_emb, 3, &g_bb);

        let mut g_s2 = g_s2_skip;
        g_s2.add_assign_tensor(&avgpool2_backward(&g_p2));
        let g_p1 = back_block(&mut grads, &mut g_emb, 2, &g_s2);

        let mut g_s1 = g_s1_skip;
        g_s1.add_assign_tensor(&avgpool2_backward(&g_p1));
        let g_p0 = back_block(&mut grads, &mut g_emb, 1, &g_s1);

        let mut g_s0 = g_s0_skip;
        g_s0.add_assign_tensor(&avgpool2_backward(&g_p0));
        let g_x = back_block(&mut grads, &mut g_emb, 0, &g_s0);

        let g_trunk_pre = act_backward_vec(act, &cache.trunk_pre, &g_emb);
        let mut g_emb_raw = vec![T::ZERO; self.spec.embed_dim];
        {
            let (gtw, gtb) = self.grad_pair(&mut grads, self.trunk_w, self.trunk_b);
            dense_backward(
                &cache.emb_raw,
                self.params.slice(self.trunk_w),
                &g_trunk_pre,
                gtw,
                gtb,
                &mut g_emb_raw,
            );
        }
        debug_assert!(cache.x.same_shape(&g_x));
        (grads, g_x)
    }
}

impl DenoiserNet<f32> {
    /// Exact float64 copy for finite-difference shadow checks.
    pub fn shadow(&self) -> DenoiserNet<f64> {
        let mut net = DenoiserNet::<f64>::zeroed(self.spec).expect("spec already validated");
        net.set_activation(self.activation);
        for (dst, src) in net.params.data_mut().iter_mut().zip(self.params.data()) {
            *dst = *src as f64;
        }
        net
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            widths: [4, 6, 8],
            embed_dim: 8,
        }
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let net = DenoiserNet::<f32>::new(tiny_spec(), 3).unwrap();
        let x = Tensor::<f32>::zeros(3, 16, 16);
        let (y, _) = net.forward(&x, 7);
        assert!(y.same_shape(&x));
    }

    #[test]
    fn initialization_and_forward_are_deterministic() {
        let a = DenoiserNet::<f32>::new(tiny_spec(), 42).unwrap();
        let b = DenoiserNet::<f32>::new(tiny_spec(), 42).unwrap();
        assert_eq!(a.params().data(), b.params().data());
        let mut x = Tensor::<f32>::zeros(3, 16, 16);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f32 / 11.0 - 0.5;
        }
        let (ya, _) = a.forward(&x, 13);
        let (yb, _) = b.forward(&x, 13);
        assert_eq!(ya.data(), yb.data());
        let c = DenoiserNet::<f32>::new(tiny_spec(), 43).unwrap();
        assert_ne!(a.params().data(), c.params().data());
    }

    #[test]
    fn zero_net_maps_everything_to_zero() {
        let net = DenoiserNet::<f32>::zeroed(tiny_spec()).unwrap();
        let mut x = Tensor::<f32>::zeros(3, 16, 16);
        x.data_mut()[5] = 1.5;
        let (y, _) = net.forward(&x, 99);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_names_cover_every_layer() {
        let net = DenoiserNet::<f32>::zeroed(tiny_spec()).unwrap();
        let names: Vec<&str> = net
            .params()
            .entries()
            .iter()
            .map(|e| e.name.as_str())
            .collect();
        assert_eq!(names.len(), 2 + 7 * 4 + 2);
        for block in ["enc0", "enc1", "enc2", "bottleneck", "dec2", "dec1", "dec0"] {
            for part in ["conv.w", "conv.b", "time.w", "time.b"] {
                assert!(names.contains(&format!("{block}.{part}").as_str()));
            }
        }
        assert!(names.contains(&"time_trunk.w"));
        assert!(names.contains(&"head.w"));
        // offsets tile the flat buffer without gaps
        let mut expect = 0;
        for e in net.params().entries() {
            assert_eq!(e.offset, expect);
            assert_eq!(e.len, e.shape.iter().product::<usize>());
            expect += e.len;
        }
        assert_eq!(expect, net.num_params());
    }

    #[test]
    fn shadow_copy_preserves_exact_values() {
        let net = DenoiserNet::<f32>::new(tiny_spec(), 5).unwrap();
        let shadow = net.shadow();
        for (a, b) in net.params().data().iter().zip(shadow.params().data()) {
            assert_eq!(*a as f64, *b);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(matches!(
            DenoiserNet::<f32>::zeroed(NetSpec {
                widths: [0, 4, 4],
                embed_dim: 8
            }),
            Err(NnError::BadWidths)
        ));
        assert!(matches!(
            DenoiserNet::<f32>::zeroed(NetSpec {
                widths: [4, 4, 4],
                embed_dim: 7
            }),
            Err(NnError::BadEmbedDim(7))
        ));
        assert!(DenoiserNet::<f32>::check_resolution(24).is_ok());
        assert!(DenoiserNet::<f32>::check_resolution(20).is_err());
    }
}
