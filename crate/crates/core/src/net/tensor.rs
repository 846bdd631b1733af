//! Dense tensors for the segmentation network.
//!
//! Layout is chosen for the convolution inner loop: activations are
//! channels-innermost `[H, W, C]`, kernels are output-channel-innermost
//! `[k, k, C_in, C_out]`, so the hot loop reads and writes contiguous
//! runs. Everything is generic over the float type — training runs in
//! `f32`, gradient checks in `f64`.

use num_traits::Float;

use crate::{Error, Result};

/// Row-major `[H, W, C]` activation tensor; index = `(y * w + x) * c + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<F> {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<F>,
}

impl<F: Float> Tensor3<F> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Tensor3 { h, w, c, data: vec![F::zero(); h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::DimensionMismatch(format!(
                "tensor [{h}, {w}, {c}] needs {} values, got {}",
                h * w * c,
                data.len()
            )));
        }
        Ok(Tensor3 { h, w, c, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> F {
        debug_assert!(y < self.h && x < self.w && ch < self.c);
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: F) {
        debug_assert!(y < self.h && x < self.w && ch < self.c);
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// The contiguous channel slice at one pixel.
    #[inline]
    pub fn px(&self, y: usize, x: usize) -> &[F] {
        let base = (y * self.w + x) * self.c;
        &self.data[base..base + self.c]
    }

    #[inline]
    pub fn px_mut(&mut self, y: usize, x: usize) -> &mut [F] {
        let base = (y * self.w + x) * self.c;
        &mut self.data[base..base + self.c]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }
}

/// `[k, k, C_in, C_out]` convolution weights;
/// index = `((ky * k + kx) * c_in + ic) * c_out + oc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4<F> {
    k: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<F>,
}

impl<F: Float> Kernel4<F> {
    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        Kernel4 { k, c_in, c_out, data: vec![F::zero(); k * k * c_in * c_out] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The contiguous output-channel slice for one `(ky, kx, ic)` tap.
    #[inline]
    pub fn tap(&self, ky: usize, kx: usize, ic: usize) -> &[F] {
        let base = ((ky * self.k + kx) * self.c_in + ic) * self.c_out;
        &self.data[base..base + self.c_out]
    }

    #[inline]
    pub fn tap_mut(&mut self, ky: usize, kx: usize, ic: usize) -> &mut [F] {
        let base = ((ky * self.k + kx) * self.c_in + ic) * self.c_out;
        &mut self.data[base..base + self.c_out]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }
}

/// Small row-major matrix for the attention block (token count × width).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Float> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for kk in 0..self.cols {
                let a = self.get(i, kk);
                let brow = other.row(kk);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for kk in 0..self.rows {
            let arow = self.row(kk);
            let brow = other.row(kk);
            for (i, &a) in arow.iter().enumerate() {
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = F::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc = acc + a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_layout_is_channels_innermost() {
        let mut t = Tensor3::<f64>::zeros(2, 3, 4);
        t.set(1, 2, 3, 7.0);
        assert_eq!(t.as_slice()[(1 * 3 + 2) * 4 + 3], 7.0);
        assert_eq!(t.px(1, 2), &[0.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn kernel_tap_is_contiguous_over_output_channels() {
        let mut k = Kernel4::<f64>::zeros(3, 2, 5);
        k.tap_mut(2, 1, 0)[4] = 9.0;
        let base = ((2 * 3 + 1) * 2 + 0) * 5;
        assert_eq!(k.as_slice()[base + 4], 9.0);
    }

    #[test]
    fn matmul_variants_agree_with_hand_results() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Mat::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(a.matmul(&b).as_slice(), &[19.0, 22.0, 43.0, 50.0]);
        // aᵀ·b = [26 30; 38 44]
        assert_eq!(a.matmul_tn(&b).as_slice(), &[26.0, 30.0, 38.0, 44.0]);
        // a·bᵀ = [17 23; 39 53]
        assert_eq!(a.matmul_nt(&b).as_slice(), &[17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        assert!(Tensor3::<f32>::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Mat::<f32>::from_vec(2, 3, vec![0.0; 5]).is_err());
    }
}
