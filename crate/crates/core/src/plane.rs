//! Row-major 2D grids.
//!
//! `x` indexes columns west→east, `y` indexes rows north→south (row 0 is
//! the northern edge), and element `(x, y)` lives at `data[y * width + x]`.
//! Every raster in the crate — band reflectances, DEM heights, score maps,
//! probabilities — is a [`Plane`]; binary masks get the dedicated
//! [`MaskPlane`] so the 0/1 invariant is enforced at the type level.

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane data holds {} values, {}x{} needs {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Plane { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// True when `other` has the same width and height.
    pub fn same_shape<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Plane<f32> {
    /// Bilinear sample at fractional pixel coordinates, where integer
    /// coordinates land on pixel centres. Coordinates outside the grid are
    /// clamped to the border pixel.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bot = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Binary raster; values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MaskPlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        MaskPlane { width, height, data: vec![0; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        MaskPlane { width, height, data: vec![1; width * height] }
    }

    /// Build from raw bytes, rejecting anything outside {0, 1}.
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask data holds {} values, {}x{} needs {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::BadInput(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(MaskPlane { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value as u8;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Fraction of set pixels over the whole grid.
    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &MaskPlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Lossless round-trip to the f32 representation used on disk
    /// (0.0 / 1.0 planes).
    pub fn to_f32_plane(&self) -> Plane<f32> {
        let data = self.data.iter().map(|&v| v as f32).collect();
        Plane { width: self.width, height: self.height, data }
    }

    /// Inverse of [`to_f32_plane`](Self::to_f32_plane); anything other
    /// than exact 0.0 or 1.0 is rejected rather than rounded.
    pub fn from_f32_plane(plane: &Plane<f32>) -> Result<Self> {
        let mut data = Vec::with_capacity(plane.len());
        for &v in plane.as_slice() {
            if v == 0.0 {
                data.push(0u8);
            } else if v == 1.0 {
                data.push(1u8);
            } else {
                return Err(Error::BadInput(format!(
                    "mask plane contains {v}, expected exact 0.0 or 1.0"
                )));
            }
        }
        Ok(MaskPlane { width: plane.width(), height: plane.height(), data })
    }
}
