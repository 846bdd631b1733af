//! Network layers: forward passes and their exact adjoints.
//!
//! Every backward here is the true transpose of its forward (verified in
//! tests by the adjoint identity ⟨Ax, y⟩ = ⟨x, Aᵀy⟩ for the linear ops and
//! by finite differences for the rest), so whole-model gradient checks can
//! hold the composed network to tight tolerance.

use num_traits::Float;

use super::tensor::{Kernel4, Mat, Tensor3};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Convolution, stride 1, zero-padded to preserve H and W.
// ---------------------------------------------------------------------------

/// Register-block width of the forward pass: 8 f32 accumulators fit two
/// SSE registers, and blocking only splits the output-channel dimension, so
/// each sum is formed in the same order as the plain definition.
const BLOCK: usize = 8;

/// Sliding correlation: `out[y, x, oc] = b[oc] + Σ in[y+ky-p, x+kx-p, ic] ·
/// k[ky, kx, ic, oc]`, taps outside the grid contributing zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub kernel: Kernel4<F>,
    pub bias: Vec<F>,
}

impl<F: Float> Conv2d<F> {
    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd to preserve shape");
        Conv2d { kernel: Kernel4::zeros(k, c_in, c_out), bias: vec![F::zero(); c_out] }
    }

    pub fn forward(&self, x: &Tensor3<F>) -> Tensor3<F> {
        let (h, w) = (x.h(), x.w());
        let (k, c_in, c_out) = (self.kernel.k(), self.kernel.c_in(), self.kernel.c_out());
        assert_eq!(x.c(), c_in, "conv input channels");
        let pad = k / 2;
        let mut out = Tensor3::zeros(h, w, c_out);
        for y in 0..h {
            // Clip the tap window once per row instead of testing every tap:
            // valid rows satisfy `0 ≤ y + ky − pad < h`.
            let ky_lo = pad.saturating_sub(y);
            let ky_hi = k.min(h + pad - y);
            // Interior columns see the full kx range, so adjacent pairs can
            // share each kernel-tap load; edge columns go one at a time.
            let int_hi = w.saturating_sub(pad);
            let mut x0 = 0;
            while x0 < w {
                if x0 >= pad && x0 + 1 < int_hi {
                    self.forward_pair(x, &mut out, y, x0, ky_lo, ky_hi);
                    x0 += 2;
                } else {
                    self.forward_one(x, &mut out, y, x0, ky_lo, ky_hi);
                    x0 += 1;
                }
            }
        }
        out
    }

    /// One output pixel, tap window clipped on all sides. Output channels go
    /// in blocks of 8 so the partial sums live in fixed-size stack arrays the
    /// compiler keeps in registers; accumulating straight into the output row
    /// would cost a load + store per tap. Blocking splits only the
    /// output-channel dimension, so every sum is still formed in plain
    /// (ky, kx, ic) order.
    fn forward_one(
        &self,
        x: &Tensor3<F>,
        out: &mut Tensor3<F>,
        y: usize,
        x0: usize,
        ky_lo: usize,
        ky_hi: usize,
    ) {
        let (k, c_in, c_out) = (self.kernel.k(), self.kernel.c_in(), self.kernel.c_out());
        let pad = k / 2;
        let kx_lo = pad.saturating_sub(x0);
        let kx_hi = k.min(x.w() + pad - x0);
        let kdata = self.kernel.as_slice();
        let mut ob = 0;
        while ob + BLOCK <= c_out {
            let mut acc = [F::zero(); BLOCK];
            acc.copy_from_slice(&self.bias[ob..ob + BLOCK]);
            for ky in ky_lo..ky_hi {
                let yy = y + ky - pad;
                for kx in kx_lo..kx_hi {
                    let xx = x0 + kx - pad;
                    let irow = x.px(yy, xx);
                    let base = (ky * k + kx) * c_in * c_out;
                    let tap_run = &kdata[base..base + c_in * c_out];
                    for (&v, taps) in irow.iter().zip(tap_run.chunks_exact(c_out)) {
                        let t: &[F; BLOCK] =
                            taps[ob..ob + BLOCK].try_into().expect("block-sized slice");
                        for (a, &t) in acc.iter_mut().zip(t) {
                            *a = *a + v * t;
                        }
                    }
                }
            }
            out.px_mut(y, x0)[ob..ob + BLOCK].copy_from_slice(&acc);
            ob += BLOCK;
        }
        if ob < c_out {
            self.forward_tail(x, out, y, x0, ky_lo, ky_hi, ob);
        }
    }

    /// Two horizontally adjacent interior pixels at once: their windows are
    /// offset by one column but read the same kernel taps, so each tap load
    /// feeds two accumulators.
    fn forward_pair(
        &self,
        x: &Tensor3<F>,
        out: &mut Tensor3<F>,
        y: usize,
        x0: usize,
        ky_lo: usize,
        ky_hi: usize,
    ) {
        let (k, c_in, c_out) = (self.kernel.k(), self.kernel.c_in(), self.kernel.c_out());
        let pad = k / 2;
        let kdata = self.kernel.as_slice();
        let mut ob = 0;
        while ob + BLOCK <= c_out {
            let mut acc0 = [F::zero(); BLOCK];
            acc0.copy_from_slice(&self.bias[ob..ob + BLOCK]);
            let mut acc1 = acc0;
            for ky in ky_lo..ky_hi {
                let yy = y + ky - pad;
                for kx in 0..k {
                    let xx = x0 + kx - pad;
                    let irow0 = x.px(yy, xx);
                    let irow1 = x.px(yy, xx + 1);
                    let base = (ky * k + kx) * c_in * c_out;
                    let tap_run = &kdata[base..base + c_in * c_out];
                    for ((&v0, &v1), taps) in
                        irow0.iter().zip(irow1).zip(tap_run.chunks_exact(c_out))
                    {
                        let t: &[F; BLOCK] =
                            taps[ob..ob + BLOCK].try_into().expect("block-sized slice");
                        for ((a0, a1), &t) in acc0.iter_mut().zip(&mut acc1).zip(t) {
                            *a0 = *a0 + v0 * t;
                            *a1 = *a1 + v1 * t;
                        }
                    }
                }
            }
            out.px_mut(y, x0)[ob..ob + BLOCK].copy_from_slice(&acc0);
            out.px_mut(y, x0 + 1)[ob..ob + BLOCK].copy_from_slice(&acc1);
            ob += BLOCK;
        }
        if ob < c_out {
            self.forward_tail(x, out, y, x0, ky_lo, ky_hi, ob);
            self.forward_tail(x, out, y, x0 + 1, ky_lo, ky_hi, ob);
        }
    }

    /// Remainder channels when `c_out` is not a multiple of the block.
    fn forward_tail(
        &self,
        x: &Tensor3<F>,
        out: &mut Tensor3<F>,
        y: usize,
        x0: usize,
        ky_lo: usize,
        ky_hi: usize,
        ob: usize,
    ) {
        let k = self.kernel.k();
        let pad = k / 2;
        let kx_lo = pad.saturating_sub(x0);
        let kx_hi = k.min(x.w() + pad - x0);
        let orow = &mut out.px_mut(y, x0)[ob..];
        orow.copy_from_slice(&self.bias[ob..]);
        for ky in ky_lo..ky_hi {
            let yy = y + ky - pad;
            for kx in kx_lo..kx_hi {
                let xx = x0 + kx - pad;
                let irow = x.px(yy, xx);
                for (ic, &v) in irow.iter().enumerate() {
                    let taps = &self.kernel.tap(ky, kx, ic)[ob..];
                    for (o, &t) in orow.iter_mut().zip(taps) {
                        *o = *o + v * t;
                    }
                }
            }
        }
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(forward output)`.
    /// Returns dL/d(input); weight gradients accumulate into `gkernel` and
    /// `gbias` so a caller can sum over a batch.
    pub fn backward(
        &self,
        x: &Tensor3<F>,
        grad_out: &Tensor3<F>,
        gkernel: &mut Kernel4<F>,
        gbias: &mut [F],
    ) -> Tensor3<F> {
        let (h, w) = (x.h(), x.w());
        let (k, c_in, c_out) = (self.kernel.k(), self.kernel.c_in(), self.kernel.c_out());
        assert_eq!(grad_out.h(), h);
        assert_eq!(grad_out.w(), w);
        assert_eq!(grad_out.c(), c_out);
        let pad = k / 2;
        let mut grad_in = Tensor3::zeros(h, w, c_in);
        for y in 0..h {
            for x0 in 0..w {
                let grow = grad_out.px(y, x0);
                for (gb, &g) in gbias.iter_mut().zip(grow) {
                    *gb = *gb + g;
                }
                for ky in 0..k {
                    let yy = y + ky;
                    if yy < pad || yy - pad >= h {
                        continue;
                    }
                    let yy = yy - pad;
                    for kx in 0..k {
                        let xx = x0 + kx;
                        if xx < pad || xx - pad >= w {
                            continue;
                        }
                        let xx = xx - pad;
                        let irow = x.px(yy, xx);
                        let gin_row = grad_in.px_mut(yy, xx);
                        for ic in 0..c_in {
                            let v = irow[ic];
                            let taps = self.kernel.tap(ky, kx, ic);
                            let gtaps = gkernel.tap_mut(ky, kx, ic);
                            let mut acc = F::zero();
                            for ((gt, &t), &g) in gtaps.iter_mut().zip(taps).zip(grow) {
                                *gt = *gt + v * g;
                                acc = acc + t * g;
                            }
                            gin_row[ic] = gin_row[ic] + acc;
                        }
                    }
                }
            }
        }
        grad_in
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_inplace<F: Float>(t: &mut Tensor3<F>) {
    for v in t.as_mut_slice() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Gradient through ReLU given the *post-activation* tensor: passes where
/// the output is positive. (At exactly zero the subgradient 0 is used.)
pub fn relu_backward<F: Float>(post: &Tensor3<F>, grad_out: &Tensor3<F>) -> Tensor3<F> {
    let mut grad_in = grad_out.clone();
    for (g, &a) in grad_in.as_mut_slice().iter_mut().zip(post.as_slice()) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
    grad_in
}

// ---------------------------------------------------------------------------
// 2×2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// Output is `floor(H/2) × floor(W/2)`; a trailing odd row/column is
/// dropped. Returns the flat input index of each winner so the backward
/// pass can route gradients; ties go to the first candidate in scan order.
pub fn maxpool2_forward<F: Float>(x: &Tensor3<F>) -> (Tensor3<F>, Vec<u32>) {
    let (oh, ow, c) = (x.h() / 2, x.w() / 2, x.c());
    let mut out = Tensor3::zeros(oh, ow, c);
    let mut argmax = vec![0u32; oh * ow * c];
    for y in 0..oh {
        for x0 in 0..ow {
            for ch in 0..c {
                let mut best = F::neg_infinity();
                let mut best_idx = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sy, sx) = (2 * y + dy, 2 * x0 + dx);
                        let v = x.get(sy, sx, ch);
                        if v > best {
                            best = v;
                            best_idx = ((sy * x.w() + sx) * c + ch) as u32;
                        }
                    }
                }
                out.set(y, x0, ch, best);
                argmax[(y * ow + x0) * c + ch] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward<F: Float>(
    grad_out: &Tensor3<F>,
    argmax: &[u32],
    in_h: usize,
    in_w: usize,
) -> Tensor3<F> {
    let mut grad_in = Tensor3::zeros(in_h, in_w, grad_out.c());
    for (&idx, &g) in argmax.iter().zip(grad_out.as_slice()) {
        let slot = &mut grad_in.as_mut_slice()[idx as usize];
        *slot = *slot + g;
    }
    grad_in
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel-center convention)
// ---------------------------------------------------------------------------

/// The four source taps and weights for one output coordinate.
#[inline]
pub(crate) fn resize_taps(out_i: usize, out_n: usize, in_n: usize) -> (usize, usize, f64, f64) {
    let src = ((out_i as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5)
        .clamp(0.0, (in_n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_n - 1);
    let frac = src - i0 as f64;
    (i0, i1, 1.0 - frac, frac)
}

pub fn resize_bilinear<F: Float>(x: &Tensor3<F>, out_h: usize, out_w: usize) -> Tensor3<F> {
    let c = x.c();
    let mut out = Tensor3::zeros(out_h, out_w, c);
    // The horizontal taps repeat identically on every row; compute them once.
    let xtaps: Vec<(usize, usize, f64, f64)> =
        (0..out_w).map(|x0| resize_taps(x0, out_w, x.w())).collect();
    for y in 0..out_h {
        let (y0, y1, wy0, wy1) = resize_taps(y, out_h, x.h());
        for (x0, &(x0i, x1i, wx0, wx1)) in xtaps.iter().enumerate() {
            let w00 = F::from(wy0 * wx0).unwrap();
            let w01 = F::from(wy0 * wx1).unwrap();
            let w10 = F::from(wy1 * wx0).unwrap();
            let w11 = F::from(wy1 * wx1).unwrap();
            let p00 = x.px(y0, x0i);
            let p01 = x.px(y0, x1i);
            let p10 = x.px(y1, x0i);
            let p11 = x.px(y1, x1i);
            let orow = out.px_mut(y, x0);
            for ch in 0..c {
                orow[ch] = p00[ch] * w00 + p01[ch] * w01 + p10[ch] * w10 + p11[ch] * w11;
            }
        }
    }
    out
}

/// Transpose of [`resize_bilinear`]: scatters each output gradient back to
/// its four source taps with the same weights.
pub fn resize_bilinear_backward<F: Float>(
    grad_out: &Tensor3<F>,
    in_h: usize,
    in_w: usize,
) -> Tensor3<F> {
    let c = grad_out.c();
    let mut grad_in = Tensor3::zeros(in_h, in_w, c);
    for y in 0..grad_out.h() {
        let (y0, y1, wy0, wy1) = resize_taps(y, grad_out.h(), in_h);
        for x0 in 0..grad_out.w() {
            let (x0i, x1i, wx0, wx1) = resize_taps(x0, grad_out.w(), in_w);
            let grow = grad_out.px(y, x0);
            for (ti, tw) in [
                ((y0, x0i), wy0 * wx0),
                ((y0, x1i), wy0 * wx1),
                ((y1, x0i), wy1 * wx0),
                ((y1, x1i), wy1 * wx1),
            ] {
                let w = F::from(tw).unwrap();
                let trow = grad_in.px_mut(ti.0, ti.1);
                for ch in 0..c {
                    trow[ch] = trow[ch] + grow[ch] * w;
                }
            }
        }
    }
    grad_in
}

// ---------------------------------------------------------------------------
// Scaled dot-product self-attention with a residual connection
// ---------------------------------------------------------------------------

/// `out = x + softmax(xWq (xWk)ᵀ / √d) · xWv` over the coarsest feature
/// map flattened to tokens. Queries, keys, and values share width d.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<F> {
    pub wq: Mat<F>,
    pub wk: Mat<F>,
    pub wv: Mat<F>,
}

/// Intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    weights: Mat<F>,
}

impl<F: Float> Attention<F> {
    pub fn zeros(d: usize) -> Self {
        Attention { wq: Mat::zeros(d, d), wk: Mat::zeros(d, d), wv: Mat::zeros(d, d) }
    }

    pub fn d(&self) -> usize {
        self.wq.rows()
    }

    pub fn forward(&self, x: &Mat<F>) -> (Mat<F>, AttentionCache<F>) {
        let d = self.d();
        assert_eq!(x.cols(), d, "attention width");
        let q = x.matmul(&self.wq);
        let k = x.matmul(&self.wk);
        let v = x.matmul(&self.wv);
        let scale = F::one() / F::from(d as f64).unwrap().sqrt();
        let mut scores = q.matmul_nt(&k);
        for s in scores.as_mut_slice() {
            *s = *s * scale;
        }
        // Row softmax with max subtraction so large scores cannot overflow.
        let mut weights = scores;
        for r in 0..weights.rows() {
            let row = weights.row_mut(r);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for s in row.iter_mut() {
                *s = (*s - m).exp();
                sum = sum + *s;
            }
            for s in row.iter_mut() {
                *s = *s / sum;
            }
        }
        let mut out = weights.matmul(&v);
        for (o, &xi) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *o = *o + xi;
        }
        (out, AttentionCache { q, k, v, weights })
    }

    /// Returns dL/dx; weight gradients accumulate into `grads`.
    pub fn backward(
        &self,
        x: &Mat<F>,
        cache: &AttentionCache<F>,
        grad_out: &Mat<F>,
        grads: &mut Attention<F>,
    ) -> Mat<F> {
        let d = self.d();
        let scale = F::one() / F::from(d as f64).unwrap().sqrt();
        // out = x + weights·v
        let gv = cache.weights.matmul_tn(grad_out);
        let gweights = grad_out.matmul_nt(&cache.v);
        // Softmax rows: dS_i = A_i ⊙ (dA_i − ⟨dA_i, A_i⟩).
        let mut gscores = gweights;
        for r in 0..gscores.rows() {
            let arow = cache.weights.row(r);
            let grow = gscores.row_mut(r);
            let mut dot = F::zero();
            for (&g, &a) in grow.iter().zip(arow) {
                dot = dot + g * a;
            }
            for (g, &a) in grow.iter_mut().zip(arow) {
                *g = a * (*g - dot);
            }
        }
        for g in gscores.as_mut_slice() {
            *g = *g * scale;
        }
        let gq = gscores.matmul(&cache.k);
        let gk = gscores.matmul_tn(&cache.q);
        // Projections: accumulate weight grads, then push back to x.
        let add = |dst: &mut Mat<F>, src: &Mat<F>| {
            for (d0, &s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d0 = *d0 + s;
            }
        };
        add(&mut grads.wq, &x.matmul_tn(&gq));
        add(&mut grads.wk, &x.matmul_tn(&gk));
        add(&mut grads.wv, &x.matmul_tn(&gv));
        let mut gx = grad_out.clone(); // residual path
        add(&mut gx, &gq.matmul_nt(&self.wq));
        add(&mut gx, &gk.matmul_nt(&self.wk));
        add(&mut gx, &gv.matmul_nt(&self.wv));
        gx
    }
}

// ---------------------------------------------------------------------------
// Fully connected layer (used by the sediment regressor)
// ---------------------------------------------------------------------------

/// `out = W·x + b` with `W` stored `[n_out × n_in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub w: Mat<F>,
    pub b: Vec<F>,
}

impl<F: Float> Dense<F> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { w: Mat::zeros(n_out, n_in), b: vec![F::zero(); n_out] }
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.n_in());
        let mut out = self.b.clone();
        for (o, r) in out.iter_mut().zip(0..self.n_out()) {
            let wrow = self.w.row(r);
            for (&wi, &xi) in wrow.iter().zip(x) {
                *o = *o + wi * xi;
            }
        }
        out
    }

    /// Returns dL/dx; weight gradients accumulate into `gw`/`gb`.
    pub fn backward(&self, x: &[F], grad_out: &[F], gw: &mut Mat<F>, gb: &mut [F]) -> Vec<F> {
        let mut grad_in = vec![F::zero(); self.n_in()];
        for (r, &g) in grad_out.iter().enumerate() {
            gb[r] = gb[r] + g;
            let wrow = self.w.row(r);
            let growt = gw.row_mut(r);
            for i in 0..self.n_in() {
                growt[i] = growt[i] + g * x[i];
                grad_in[i] = grad_in[i] + g * wrow[i];
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_tensor(rng: &mut CounterRng, h: usize, w: usize, c: usize) -> Tensor3<f64> {
        let data = (0..h * w * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor3::from_vec(h, w, c, data).unwrap()
    }

    fn random_mat(rng: &mut CounterRng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Convolution oracle: the definition written as six plain loops.
    fn conv_naive(layer: &Conv2d<f64>, x: &Tensor3<f64>) -> Tensor3<f64> {
        let (k, c_in, c_out) = (layer.kernel.k(), layer.kernel.c_in(), layer.kernel.c_out());
        let pad = (k / 2) as isize;
        let mut out = Tensor3::zeros(x.h(), x.w(), c_out);
        for y in 0..x.h() as isize {
            for x0 in 0..x.w() as isize {
                for oc in 0..c_out {
                    let mut acc = layer.bias[oc];
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (yy, xx) = (y + ky - pad, x0 + kx - pad);
                            if yy < 0 || yy >= x.h() as isize || xx < 0 || xx >= x.w() as isize {
                                continue;
                            }
                            for ic in 0..c_in {
                                acc += x.get(yy as usize, xx as usize, ic)
                                    * layer.kernel.tap(ky as usize, kx as usize, ic)[oc];
                            }
                        }
                    }
                    out.set(y as usize, x0 as usize, oc, acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_the_naive_definition() {
        let mut rng = CounterRng::new(11);
        let mut layer = Conv2d::zeros(3, 3, 4);
        for v in layer.kernel.as_mut_slice() {
            *v = rng.uniform(-1.0, 1.0);
        }
        for b in &mut layer.bias {
            *b = rng.uniform(-0.5, 0.5);
        }
        let x = random_tensor(&mut rng, 7, 6, 3);
        let fast = layer.forward(&x);
        let slow = conv_naive(&layer, &x);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12, "fast {a} vs naive {b}");
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut layer = Conv2d::zeros(3, 1, 1);
        layer.kernel.tap_mut(1, 1, 0)[0] = 1.0; // centre tap only
        let mut rng = CounterRng::new(3);
        let x = random_tensor(&mut rng, 5, 5, 1);
        assert_eq!(layer.forward(&x), x);
    }

    #[test]
    fn conv_input_gradient_is_the_adjoint() {
        // For fixed weights the map x → conv(x) − conv(0) is linear, so its
        // backward must satisfy ⟨A x, g⟩ = ⟨x, Aᵀ g⟩ exactly.
        let mut rng = CounterRng::new(21);
        let mut layer = Conv2d::zeros(3, 2, 3);
        for v in layer.kernel.as_mut_slice() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let x = random_tensor(&mut rng, 6, 5, 2);
        let g = random_tensor(&mut rng, 6, 5, 3);
        let ax = layer.forward(&x);
        let mut gk = Kernel4::zeros(3, 2, 3);
        let mut gb = vec![0.0; 3];
        let atg = layer.backward(&x, &g, &mut gk, &mut gb);
        let lhs = dot(ax.as_slice(), g.as_slice());
        let rhs = dot(x.as_slice(), atg.as_slice());
        assert!((lhs - rhs).abs() < 1e-10, "⟨Ax,g⟩={lhs} vs ⟨x,Aᵀg⟩={rhs}");
    }

    #[test]
    fn conv_weight_gradients_match_finite_differences() {
        let mut rng = CounterRng::new(37);
        let mut layer = Conv2d::zeros(3, 2, 2);
        for v in layer.kernel.as_mut_slice() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let x = random_tensor(&mut rng, 5, 4, 2);
        let probe = random_tensor(&mut rng, 5, 4, 2); // loss = ⟨out, probe⟩
        let mut gk = Kernel4::zeros(3, 2, 2);
        let mut gb = vec![0.0; 2];
        layer.backward(&x, &probe, &mut gk, &mut gb);
        let h = 1e-6;
        for idx in [0usize, 7, 17, 35] {
            let mut plus = layer.clone();
            plus.kernel.as_mut_slice()[idx] += h;
            let mut minus = layer.clone();
            minus.kernel.as_mut_slice()[idx] -= h;
            let num = (dot(plus.forward(&x).as_slice(), probe.as_slice())
                - dot(minus.forward(&x).as_slice(), probe.as_slice()))
                / (2.0 * h);
            let ana = gk.as_slice()[idx];
            assert!((num - ana).abs() < 1e-6, "kernel[{idx}]: numeric {num} vs analytic {ana}");
        }
        let mut plus = layer.clone();
        plus.bias[1] += h;
        let num = (dot(plus.forward(&x).as_slice(), probe.as_slice())
            - dot(layer.forward(&x).as_slice(), probe.as_slice()))
            / h;
        assert!((num - gb[1]).abs() < 1e-6);
    }

    #[test]
    fn maxpool_picks_maxima_and_routes_gradients_back() {
        let x = Tensor3::from_vec(
            2,
            4,
            1,
            vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 9.0],
        )
        .unwrap();
        let (out, argmax) = maxpool2_forward(&x);
        assert_eq!(out.as_slice(), &[5.0, 9.0]);
        let g = Tensor3::from_vec(1, 2, 1, vec![10.0, 20.0]).unwrap();
        let gin = maxpool2_backward(&g, &argmax, 2, 4);
        assert_eq!(gin.as_slice(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first_in_scan_order() {
        let x = Tensor3::from_vec(2, 2, 1, vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, argmax) = maxpool2_forward(&x);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn resize_preserves_constants_and_means() {
        // Bilinear weights form a partition of unity, so a constant field
        // resizes to itself and the mean is preserved under upsampling.
        let x = Tensor3::from_vec(2, 2, 1, vec![3.5; 4]).unwrap();
        let up = resize_bilinear(&x, 16, 16);
        for &v in up.as_slice() {
            assert!((v - 3.5f64).abs() < 1e-12);
        }
        let mut rng = CounterRng::new(5);
        let x = random_tensor(&mut rng, 4, 4, 2);
        let up = resize_bilinear(&x, 8, 8);
        let mean_in: f64 = x.as_slice().iter().sum::<f64>() / x.len() as f64;
        let mean_up: f64 = up.as_slice().iter().sum::<f64>() / up.len() as f64;
        assert!((mean_in - mean_up).abs() < 1e-12);
    }

    #[test]
    fn resize_backward_is_the_adjoint() {
        let mut rng = CounterRng::new(9);
        let x = random_tensor(&mut rng, 3, 5, 2);
        let g = random_tensor(&mut rng, 12, 20, 2);
        let ax = resize_bilinear(&x, 12, 20);
        let atg = resize_bilinear_backward(&g, 3, 5);
        let lhs = dot(ax.as_slice(), g.as_slice());
        let rhs = dot(x.as_slice(), atg.as_slice());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let mut rng = CounterRng::new(13);
        let mut attn = Attention::zeros(4);
        for m in [&mut attn.wq, &mut attn.wk, &mut attn.wv] {
            for v in m.as_mut_slice() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let x = random_mat(&mut rng, 6, 4);
        let (_, cache) = attn.forward(&x);
        for r in 0..6 {
            let s: f64 = cache.weights.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
            assert!(cache.weights.row(r).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn attention_with_zero_value_projection_is_identity() {
        let mut rng = CounterRng::new(14);
        let mut attn = Attention::zeros(4);
        for v in attn.wq.as_mut_slice() {
            *v = rng.uniform(-1.0, 1.0);
        }
        // wv = 0 kills the attended term; the residual passes x through.
        let x = random_mat(&mut rng, 5, 4);
        let (out, _) = attn.forward(&x);
        assert_eq!(out, x);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = CounterRng::new(17);
        let mut attn = Attention::zeros(3);
        for m in [&mut attn.wq, &mut attn.wk, &mut attn.wv] {
            for v in m.as_mut_slice() {
                *v = rng.uniform(-0.8, 0.8);
            }
        }
        let x = random_mat(&mut rng, 5, 3);
        let probe = random_mat(&mut rng, 5, 3);
        let loss = |a: &Attention<f64>, xx: &Mat<f64>| -> f64 {
            let (out, _) = a.forward(xx);
            dot(out.as_slice(), probe.as_slice())
        };
        let (_, cache) = attn.forward(&x);
        let mut grads = Attention::zeros(3);
        let gx = attn.backward(&x, &cache, &probe, &mut grads);
        let h = 1e-5;
        // Every weight of each projection.
        for (which, gm) in [(0, &grads.wq), (1, &grads.wk), (2, &grads.wv)] {
            for idx in 0..9 {
                let mut plus = attn.clone();
                let mut minus = attn.clone();
                let (p, m) = match which {
                    0 => (&mut plus.wq, &mut minus.wq),
                    1 => (&mut plus.wk, &mut minus.wk),
                    _ => (&mut plus.wv, &mut minus.wv),
                };
                p.as_mut_slice()[idx] += h;
                m.as_mut_slice()[idx] -= h;
                let num = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                let ana = gm.as_slice()[idx];
                assert!(
                    (num - ana).abs() < 1e-7,
                    "proj {which} w[{idx}]: numeric {num} vs analytic {ana}"
                );
            }
        }
        // And the input.
        for idx in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[idx] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[idx] -= h;
            let num = (loss(&attn, &xp) - loss(&attn, &xm)) / (2.0 * h);
            let ana = gx.as_slice()[idx];
            assert!((num - ana).abs() < 1e-7, "x[{idx}]: numeric {num} vs analytic {ana}");
        }
    }

    #[test]
    fn dense_forward_and_backward_hand_check() {
        // W = [1 2; 3 4], b = [0.5, -0.5], x = [1, -1]
        let layer = Dense {
            w: Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: vec![0.5, -0.5],
        };
        let out = layer.forward(&[1.0, -1.0]);
        assert_eq!(out, vec![-0.5, -1.5]);
        let mut gw = Mat::zeros(2, 2);
        let mut gb = vec![0.0; 2];
        let gx = layer.backward(&[1.0, -1.0], &[1.0, 2.0], &mut gw, &mut gb);
        assert_eq!(gx, vec![7.0, 10.0]); // Wᵀ·g
        assert_eq!(gw.as_slice(), &[1.0, -1.0, 2.0, -2.0]); // g·xᵀ
        assert_eq!(gb, vec![1.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(1000.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(-1000.0f64) < 1e-12);
        for z in [-3.0f64, -0.7, 0.2, 2.5] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_gradient_masks_inactive_units() {
        let mut t = Tensor3::from_vec(1, 1, 4, vec![-1.0, 0.0, 2.0, 0.5]).unwrap();
        relu_inplace(&mut t);
        assert_eq!(t.as_slice(), &[0.0, 0.0, 2.0, 0.5]);
        let g = Tensor3::from_vec(1, 1, 4, vec![1.0; 4]).unwrap();
        let gin = relu_backward(&t, &g);
        assert_eq!(gin.as_slice(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
