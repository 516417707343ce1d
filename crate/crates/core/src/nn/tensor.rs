//! Channel-major tensors generic over element precision.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Arc;

use crate::geometry::{DisplacementGrid, UvMask};

/// Scalar element type for network tensors: `f32` for training and
/// inference, `f64` for finite-difference shadow checks.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense C×H×W tensor, channel planes stored contiguously.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::ZERO; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add_assign_tensor(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Interleaved full grid buffer → 3 channel planes.
    pub fn from_grid(grid: &DisplacementGrid) -> Self {
        let r = grid.resolution();
        let full = grid.as_full();
        let mut out = Self::zeros(3, r, r);
        for c in 0..3 {
            let plane = out.plane_mut(c);
            for (p, v) in plane.iter_mut().enumerate() {
                *v = T::from_f64(full[p * 3 + c]);
            }
        }
        out
    }

    /// 3 channel planes → masked grid; unmasked pixels are dropped.
    pub fn to_grid(&self, mask: &Arc<UvMask>) -> DisplacementGrid {
        assert_eq!(self.channels, 3);
        assert_eq!(self.height, mask.resolution());
        assert_eq!(self.width, mask.resolution());
        let n = self.height * self.width;
        let mut full = vec![0.0; n * 3];
        for c in 0..3 {
            let plane = self.plane(c);
            for p in 0..n {
                full[p * 3 + c] = plane[p].to_f64();
            }
        }
        DisplacementGrid::from_full(mask.clone(), &full)
    }
}

/// Per-pixel 1/0 multiplier plane for a validity mask.
pub fn pixel_mask<T: Real>(mask: &UvMask) -> Vec<T> {
    let r = mask.resolution();
    let mut plane = vec![T::ZERO; r * r];
    for &(x, y) in mask.pixels() {
        plane[y * r + x] = T::ONE;
    }
    plane
}

/// Multiplies every channel of `t` by the pixel plane.
pub fn apply_pixel_mask<T: Real>(t: &mut Tensor<T>, plane: &[T]) {
    let c = t.channels();
    for ci in 0..c {
        for (v, m) in t.plane_mut(ci).iter_mut().zip(plane) {
            *v *= *m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_mask() -> Arc<UvMask> {
        // 2x2 with pixel (1, 0) unmasked
        Arc::new(UvMask::new(2, vec![true, false, true, true]).unwrap())
    }

    #[test]
    fn grid_round_trip_preserves_masked_values() {
        let mask = small_mask();
        let g = DisplacementGrid::from_masked_vec(
            mask.clone(),
            &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, 0.9],
        );
        let t = Tensor::<f64>::from_grid(&g);
        assert_eq!(t.plane(0)[0], 0.1);
        assert_eq!(t.plane(2)[3], 0.9);
        assert_eq!(t.plane(1)[1], 0.0);
        let back = t.to_grid(&mask);
        assert_eq!(back.as_full(), g.as_full());
    }

    #[test]
    fn pixel_mask_matches_membership() {
        let mask = small_mask();
        let plane = pixel_mask::<f32>(&mask);
        assert_eq!(plane, vec![1.0, 0.0, 1.0, 1.0]);
        let mut t = Tensor::<f32>::from_vec(1, 2, 2, vec![5.0, 6.0, 7.0, 8.0]);
        apply_pixel_mask(&mut t, &plane);
        assert_eq!(t.data(), &[5.0, 0.0, 7.0, 8.0]);
    }
}
