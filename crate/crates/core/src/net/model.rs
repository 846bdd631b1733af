//! The shared-backbone multi-head segmentation model.
//!
//! Three conv→ReLU→maxpool stages shrink the input 8×, an optional
//! self-attention block mixes the coarsest feature map, bilinear
//! upsampling restores full resolution, and one 1×1 sigmoid head per mask
//! reads logits off the shared features. The single-mask variant is the
//! same structure with one head.
//!
//! Parameters flatten to a single vector in a fixed order (backbone first,
//! heads last) — the optimizer, gradient clipping, and checkpoints all work
//! on that flat view, and "backbone only" transfer copies its prefix.

use num_traits::Float;

use super::layers::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_inplace, resize_bilinear,
    resize_bilinear_backward, resize_taps, Attention, AttentionCache, Conv2d,
};
use super::tensor::{Mat, Tensor3};
use crate::raster::{Band, MaskKind};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Input channels are the spectral bands.
pub const INPUT_CHANNELS: usize = Band::ALL.len();

/// Architecture descriptor. Equal configs produce interchangeable
/// parameter vectors.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Output channels of the three backbone stages.
    pub channels: [usize; 3],
    /// Side length of the (odd, square) conv kernels.
    pub kernel: usize,
    /// Whether the coarsest map runs through self-attention.
    pub attention: bool,
    /// One output head per name, in order.
    pub head_names: Vec<String>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: [16, 32, 32],
            kernel: 3,
            attention: true,
            head_names: MaskKind::ALL.iter().map(|k| k.name().to_string()).collect(),
        }
    }
}

impl NetConfig {
    /// The default architecture restricted to a single mask.
    pub fn single(kind: MaskKind) -> Self {
        NetConfig { head_names: vec![kind.name().to_string()], ..NetConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::BadInput(format!("kernel size {} is not odd", self.kernel)));
        }
        if self.channels.iter().any(|&c| c == 0) || self.head_names.is_empty() {
            return Err(Error::BadInput("channels and head count must be positive".into()));
        }
        Ok(())
    }

    /// Do two configs share a backbone shape (heads may differ)?
    pub fn backbone_compatible(&self, other: &NetConfig) -> bool {
        self.channels == other.channels
            && self.kernel == other.kernel
            && self.attention == other.attention
    }
}

/// One 1×1 convolution head producing a single logit plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<F> {
    pub w: Vec<F>,
    /// One element; kept as a vector so all parameters expose as slices.
    pub bias: Vec<F>,
}

impl<F: Float> Head<F> {
    fn zeros(c_in: usize) -> Self {
        Head { w: vec![F::zero(); c_in], bias: vec![F::zero()] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskNet<F> {
    config: NetConfig,
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
    pub conv3: Conv2d<F>,
    pub attention: Option<Attention<F>>,
    pub heads: Vec<Head<F>>,
}

/// Gradient holder with the exact parameter shape of the model.
pub type NetGrads<F> = MultiTaskNet<F>;

/// Everything the backward pass needs from a forward pass, plus the logits.
pub struct Forward<F> {
    a1: Tensor3<F>,
    p1: Tensor3<F>,
    i1: Vec<u32>,
    a2: Tensor3<F>,
    p2: Tensor3<F>,
    i2: Vec<u32>,
    a3: Tensor3<F>,
    p3: Tensor3<F>,
    i3: Vec<u32>,
    attn_cache: Option<AttentionCache<F>>,
    coarse: Tensor3<F>,
    up: Tensor3<F>,
    /// One `[H, W, 1]` logit plane per head.
    pub logits: Vec<Tensor3<F>>,
}

fn uniform_fill<F: Float>(rng: &mut CounterRng, fan_in: usize, slice: &mut [F]) {
    // Uniform with variance 1/fan_in keeps activation scale roughly
    // constant through the stack.
    let limit = (3.0 / fan_in as f64).sqrt();
    for v in slice {
        *v = F::from(rng.uniform(-limit, limit)).unwrap();
    }
}

impl<F: Float> MultiTaskNet<F> {
    /// All parameters zero — the shape for gradient accumulation.
    pub fn zeros(config: &NetConfig) -> Self {
        let [c1, c2, c3] = config.channels;
        let k = config.kernel;
        MultiTaskNet {
            config: config.clone(),
            conv1: Conv2d::zeros(k, INPUT_CHANNELS, c1),
            conv2: Conv2d::zeros(k, c1, c2),
            conv3: Conv2d::zeros(k, c2, c3),
            attention: config.attention.then(|| Attention::zeros(c3)),
            heads: config.head_names.iter().map(|_| Head::zeros(c3)).collect(),
        }
    }

    /// Seeded fan-in-scaled initialization; biases start at zero.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut net = Self::zeros(config);
        let rng = CounterRng::new(seed);
        let k = config.kernel;
        let fans = [
            k * k * INPUT_CHANNELS,
            k * k * config.channels[0],
            k * k * config.channels[1],
        ];
        for (name, conv, fan) in [
            ("conv1", &mut net.conv1, fans[0]),
            ("conv2", &mut net.conv2, fans[1]),
            ("conv3", &mut net.conv3, fans[2]),
        ] {
            uniform_fill(&mut rng.stream(name), fan, conv.kernel.as_mut_slice());
        }
        if let Some(attn) = &mut net.attention {
            let d = config.channels[2];
            uniform_fill(&mut rng.stream("attention.q"), d, attn.wq.as_mut_slice());
            uniform_fill(&mut rng.stream("attention.k"), d, attn.wk.as_mut_slice());
            uniform_fill(&mut rng.stream("attention.v"), d, attn.wv.as_mut_slice());
        }
        for (head, name) in net.heads.iter_mut().zip(&config.head_names) {
            let label = format!("head.{name}");
            uniform_fill(&mut rng.stream(&label), config.channels[2], &mut head.w);
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn forward(&self, x: &Tensor3<F>) -> Forward<F> {
        assert_eq!(x.c(), INPUT_CHANNELS, "input must carry all bands");
        let mut a1 = self.conv1.forward(x);
        relu_inplace(&mut a1);
        let (p1, i1) = maxpool2_forward(&a1);
        let mut a2 = self.conv2.forward(&p1);
        relu_inplace(&mut a2);
        let (p2, i2) = maxpool2_forward(&a2);
        let mut a3 = self.conv3.forward(&p2);
        relu_inplace(&mut a3);
        let (p3, i3) = maxpool2_forward(&a3);

        let (coarse, attn_cache) = match &self.attention {
            Some(attn) => {
                // [h, w, c] with channels innermost is already the token
                // matrix [h·w × c]; reshaping is free.
                let tokens =
                    Mat::from_vec(p3.h() * p3.w(), p3.c(), p3.as_slice().to_vec()).unwrap();
                let (out, cache) = attn.forward(&tokens);
                let t = Tensor3::from_vec(p3.h(), p3.w(), p3.c(), out.as_slice().to_vec())
                    .unwrap();
                (t, Some(cache))
            }
            None => (p3.clone(), None),
        };

        let up = resize_bilinear(&coarse, x.h(), x.w());
        // All heads share one sweep so each feature row is read once.
        let mut logits: Vec<Tensor3<F>> =
            self.heads.iter().map(|_| Tensor3::zeros(up.h(), up.w(), 1)).collect();
        for y in 0..up.h() {
            for x0 in 0..up.w() {
                let feat = up.px(y, x0);
                for (head, z) in self.heads.iter().zip(&mut logits) {
                    let mut acc = head.bias[0];
                    for (&f, &w) in feat.iter().zip(&head.w) {
                        acc = acc + f * w;
                    }
                    z.set(y, x0, 0, acc);
                }
            }
        }

        Forward { a1, p1, i1, a2, p2, i2, a3, p3, i3, attn_cache, coarse, up, logits }
    }

    /// Inference-only forward: produces the same logit planes as
    /// [`forward`](Self::forward) but frees each intermediate as soon as the
    /// next stage has consumed it and never materializes the full-resolution
    /// feature map — the upsample is folded into the head products. On large
    /// tiles this roughly halves peak memory and lets the allocator recycle
    /// the stage buffers across calls.
    pub fn infer(&self, x: &Tensor3<F>) -> Vec<Tensor3<F>> {
        assert_eq!(x.c(), INPUT_CHANNELS, "input must carry all bands");
        let mut a1 = self.conv1.forward(x);
        relu_inplace(&mut a1);
        let (p1, _) = maxpool2_forward(&a1);
        drop(a1);
        let mut a2 = self.conv2.forward(&p1);
        drop(p1);
        relu_inplace(&mut a2);
        let (p2, _) = maxpool2_forward(&a2);
        drop(a2);
        let mut a3 = self.conv3.forward(&p2);
        drop(p2);
        relu_inplace(&mut a3);
        let (p3, _) = maxpool2_forward(&a3);
        drop(a3);

        let coarse = match &self.attention {
            Some(attn) => {
                let tokens =
                    Mat::from_vec(p3.h() * p3.w(), p3.c(), p3.as_slice().to_vec()).unwrap();
                let (out, _) = attn.forward(&tokens);
                Tensor3::from_vec(p3.h(), p3.w(), p3.c(), out.as_slice().to_vec()).unwrap()
            }
            None => p3,
        };

        let (h, w) = (x.h(), x.w());
        let c = coarse.c();
        let mut logits: Vec<Tensor3<F>> =
            self.heads.iter().map(|_| Tensor3::zeros(h, w, 1)).collect();
        let xtaps: Vec<(usize, usize, f64, f64)> =
            (0..w).map(|x0| resize_taps(x0, w, coarse.w())).collect();
        let mut feat = vec![F::zero(); c];
        for y in 0..h {
            let (y0, y1, wy0, wy1) = resize_taps(y, h, coarse.h());
            for (x0, &(x0i, x1i, wx0, wx1)) in xtaps.iter().enumerate() {
                // One interpolated pixel of the would-be upsampled map …
                let w00 = F::from(wy0 * wx0).unwrap();
                let w01 = F::from(wy0 * wx1).unwrap();
                let w10 = F::from(wy1 * wx0).unwrap();
                let w11 = F::from(wy1 * wx1).unwrap();
                let p00 = coarse.px(y0, x0i);
                let p01 = coarse.px(y0, x1i);
                let p10 = coarse.px(y1, x0i);
                let p11 = coarse.px(y1, x1i);
                for ch in 0..c {
                    feat[ch] = p00[ch] * w00 + p01[ch] * w01 + p10[ch] * w10 + p11[ch] * w11;
                }
                // … consumed immediately by every head.
                for (head, z) in self.heads.iter().zip(&mut logits) {
                    let mut acc = head.bias[0];
                    for (&f, &w) in feat.iter().zip(&head.w) {
                        acc = acc + f * w;
                    }
                    z.set(y, x0, 0, acc);
                }
            }
        }
        logits
    }

    /// Backpropagate per-head logit gradients into a parameter-shaped
    /// gradient holder.
    pub fn backward(
        &self,
        x: &Tensor3<F>,
        fwd: &Forward<F>,
        dlogits: &[Tensor3<F>],
    ) -> NetGrads<F> {
        assert_eq!(dlogits.len(), self.heads.len(), "one gradient plane per head");
        let mut grads = NetGrads::zeros(&self.config);

        // Heads fan shared-feature gradients back together.
        let mut dup = Tensor3::zeros(fwd.up.h(), fwd.up.w(), fwd.up.c());
        for ((head, ghead), dz) in self.heads.iter().zip(&mut grads.heads).zip(dlogits) {
            for y in 0..fwd.up.h() {
                for x0 in 0..fwd.up.w() {
                    let g = dz.get(y, x0, 0);
                    ghead.bias[0] = ghead.bias[0] + g;
                    let feat = fwd.up.px(y, x0);
                    let drow = dup.px_mut(y, x0);
                    for ch in 0..feat.len() {
                        ghead.w[ch] = ghead.w[ch] + g * feat[ch];
                        drow[ch] = drow[ch] + g * head.w[ch];
                    }
                }
            }
        }

        let dcoarse = resize_bilinear_backward(&dup, fwd.coarse.h(), fwd.coarse.w());

        let dp3 = match (&self.attention, &fwd.attn_cache) {
            (Some(attn), Some(cache)) => {
                let tokens =
                    Mat::from_vec(fwd.p3.h() * fwd.p3.w(), fwd.p3.c(), fwd.p3.as_slice().to_vec())
                        .unwrap();
                let gout = Mat::from_vec(
                    dcoarse.h() * dcoarse.w(),
                    dcoarse.c(),
                    dcoarse.as_slice().to_vec(),
                )
                .unwrap();
                let gattn = grads.attention.as_mut().expect("grads mirror the model");
                let gx = attn.backward(&tokens, cache, &gout, gattn);
                Tensor3::from_vec(fwd.p3.h(), fwd.p3.w(), fwd.p3.c(), gx.as_slice().to_vec())
                    .unwrap()
            }
            _ => dcoarse,
        };

        let da3 = relu_backward(&fwd.a3, &maxpool2_backward(&dp3, &fwd.i3, fwd.a3.h(), fwd.a3.w()));
        let dp2 = self.conv3.backward(&fwd.p2, &da3, &mut grads.conv3.kernel, &mut grads.conv3.bias);
        let da2 = relu_backward(&fwd.a2, &maxpool2_backward(&dp2, &fwd.i2, fwd.a2.h(), fwd.a2.w()));
        let dp1 = self.conv2.backward(&fwd.p1, &da2, &mut grads.conv2.kernel, &mut grads.conv2.bias);
        let da1 = relu_backward(&fwd.a1, &maxpool2_backward(&dp1, &fwd.i1, fwd.a1.h(), fwd.a1.w()));
        let _ = self.conv1.backward(x, &da1, &mut grads.conv1.kernel, &mut grads.conv1.bias);

        grads
    }

    /// Parameter slices in flattening order: backbone convs, attention
    /// projections, then heads.
    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![
            self.conv1.kernel.as_slice(),
            &self.conv1.bias,
            self.conv2.kernel.as_slice(),
            &self.conv2.bias,
            self.conv3.kernel.as_slice(),
            &self.conv3.bias,
        ];
        if let Some(attn) = &self.attention {
            out.push(attn.wq.as_slice());
            out.push(attn.wk.as_slice());
            out.push(attn.wv.as_slice());
        }
        for head in &self.heads {
            out.push(&head.w);
            out.push(&head.bias);
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![
            self.conv1.kernel.as_mut_slice(),
            &mut self.conv1.bias,
            self.conv2.kernel.as_mut_slice(),
            &mut self.conv2.bias,
            self.conv3.kernel.as_mut_slice(),
            &mut self.conv3.bias,
        ];
        if let Some(attn) = &mut self.attention {
            out.push(attn.wq.as_mut_slice());
            out.push(attn.wk.as_mut_slice());
            out.push(attn.wv.as_mut_slice());
        }
        for head in &mut self.heads {
            out.push(&mut head.w);
            out.push(&mut head.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// How many leading flat parameters belong to the backbone (everything
    /// except the heads).
    pub fn backbone_param_count(&self) -> usize {
        let head_len: usize = self.heads.iter().map(|h| h.w.len() + h.bias.len()).sum();
        self.param_count() - head_len
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn unflatten_from(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} values, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }
}

/// Dimensions must survive three halvings and an 8× upsample; anything
/// 8 px or larger works (odd remainders are absorbed by the resize).
pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h < 8 || w < 8 {
        return Err(Error::BadInput(format!(
            "input {w}×{h} is too small; the backbone needs at least 8×8"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetConfig {
        NetConfig { channels: [2, 3, 3], kernel: 3, attention: true, ..NetConfig::default() }
    }

    #[test]
    fn forward_produces_one_full_resolution_logit_plane_per_head() {
        let net = MultiTaskNet::<f32>::init(&small_config(), 7).unwrap();
        let x = Tensor3::zeros(16, 24, INPUT_CHANNELS);
        let fwd = net.forward(&x);
        assert_eq!(fwd.logits.len(), 5);
        for z in &fwd.logits {
            assert_eq!((z.h(), z.w(), z.c()), (16, 24, 1));
        }
    }

    #[test]
    fn odd_input_sizes_survive_the_pool_and_resize_round_trip() {
        let net = MultiTaskNet::<f32>::init(&small_config(), 7).unwrap();
        let x = Tensor3::zeros(70, 50, INPUT_CHANNELS);
        let fwd = net.forward(&x);
        assert_eq!((fwd.logits[0].h(), fwd.logits[0].w()), (70, 50));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = small_config();
        let a = MultiTaskNet::<f32>::init(&cfg, 42).unwrap();
        let b = MultiTaskNet::<f32>::init(&cfg, 42).unwrap();
        let c = MultiTaskNet::<f32>::init(&cfg, 43).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn flatten_round_trips_and_counts_add_up() {
        let cfg = small_config();
        let net = MultiTaskNet::<f64>::init(&cfg, 3).unwrap();
        let flat = net.flatten();
        assert_eq!(flat.len(), net.param_count());
        // conv1 3·3·6·2+2, conv2 3·3·2·3+3, conv3 3·3·3·3+3, attn 3·9,
        // heads 5·(3+1)
        let expected = (108 + 2) + (54 + 3) + (81 + 3) + 27 + 20;
        assert_eq!(flat.len(), expected);
        assert_eq!(net.backbone_param_count(), expected - 20);
        let mut other = MultiTaskNet::<f64>::zeros(&cfg);
        other.unflatten_from(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
        assert!(other.unflatten_from(&flat[1..]).is_err());
    }

    #[test]
    fn heads_share_every_backbone_computation() {
        // Zeroing one head's parameters must not change another head's
        // logits: the backbone is computed once and shared.
        let cfg = small_config();
        let mut net = MultiTaskNet::<f64>::init(&cfg, 9).unwrap();
        let mut rng = crate::rng::CounterRng::new(1);
        let data = (0..12 * 12 * INPUT_CHANNELS).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor3::from_vec(12, 12, INPUT_CHANNELS, data).unwrap();
        let before = net.forward(&x).logits[0].clone();
        net.heads[3].w.iter_mut().for_each(|w| *w = 0.0);
        net.heads[3].bias[0] = 0.0;
        let after = net.forward(&x).logits[0].clone();
        assert_eq!(before, after);
    }

    #[test]
    fn attention_free_config_carries_no_attention_parameters() {
        let cfg = NetConfig { attention: false, ..small_config() };
        let net = MultiTaskNet::<f32>::init(&cfg, 7).unwrap();
        assert!(net.attention.is_none());
        let with = MultiTaskNet::<f32>::init(&small_config(), 7).unwrap();
        assert_eq!(with.param_count() - net.param_count(), 3 * 9);
        let x = Tensor3::zeros(16, 16, INPUT_CHANNELS);
        assert_eq!(net.forward(&x).logits.len(), 5);
    }

    #[test]
    fn infer_matches_forward_bit_for_bit() {
        // The lean path reorders allocations and fuses the upsample into the
        // heads, but every arithmetic step stays in the same order, so the
        // logits must be identical — with and without attention, and on a
        // non-multiple-of-8 grid that exercises the edge interpolation taps.
        for attention in [true, false] {
            let cfg = NetConfig { attention, ..small_config() };
            let net = MultiTaskNet::<f32>::init(&cfg, 11).unwrap();
            let mut rng = crate::rng::CounterRng::new(2);
            let data =
                (0..22 * 18 * INPUT_CHANNELS).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let x = Tensor3::from_vec(22, 18, INPUT_CHANNELS, data).unwrap();
            let fwd = net.forward(&x);
            let lean = net.infer(&x);
            assert_eq!(fwd.logits.len(), lean.len());
            for (a, b) in fwd.logits.iter().zip(&lean) {
                assert_eq!(a, b, "attention={attention}");
            }
        }
    }

    #[test]
    fn undersized_inputs_are_rejected() {
        assert!(check_input_size(7, 64).is_err());
        assert!(check_input_size(64, 64).is_ok());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(NetConfig { kernel: 2, ..NetConfig::default() }.validate().is_err());
        assert!(NetConfig { channels: [0, 1, 1], ..NetConfig::default() }.validate().is_err());
        assert!(NetConfig { head_names: vec![], ..NetConfig::default() }.validate().is_err());
    }
}
