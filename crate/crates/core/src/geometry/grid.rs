use std::sync::Arc;

use super::GeometryError;

/// Validity mask of a UV atlas: which grid pixels are covered by a chart.
///
/// Pixel (x, y) has its center at ((x + 0.5) / R, (y + 0.5) / R). Masked
/// pixels are enumerated in row-major order; that order defines the dense
/// index used to flatten grids into vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct UvMask {
    resolution: usize,
    inside: Vec<bool>,
    pixels: Vec<(usize, usize)>,
    dense: Vec<u32>,
}

const NO_DENSE: u32 = u32::MAX;

impl UvMask {
    pub fn new(resolution: usize, inside: Vec<bool>) -> Result<Self, GeometryError> {
        if resolution < 2 {
            return Err(GeometryError::ResolutionTooSmall(resolution));
        }
        assert_eq!(inside.len(), resolution * resolution);
        let mut pixels = Vec::new();
        let mut dense = vec![NO_DENSE; inside.len()];
        for y in 0..resolution {
            for x in 0..resolution {
                if inside[y * resolution + x] {
                    dense[y * resolution + x] = pixels.len() as u32;
                    pixels.push((x, y));
                }
            }
        }
        if pixels.is_empty() {
            return Err(GeometryError::EmptyMask);
        }
        Ok(Self {
            resolution,
            inside,
            pixels,
            dense,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of masked pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.resolution && y < self.resolution && self.inside[y * self.resolution + x]
    }

    /// Masked pixels in row-major order.
    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    /// Dense index of a masked pixel (its rank among masked pixels).
    pub fn dense_index(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.resolution || y >= self.resolution {
            return None;
        }
        match self.dense[y * self.resolution + x] {
            NO_DENSE => None,
            i => Some(i as usize),
        }
    }
}

/// A 3-channel displacement field sampled on the UV grid of an atlas.
///
/// Values at unmasked pixels are identically zero; every operation preserves
/// that. The mask is shared with the atlas that produced the grid.
#[derive(Debug, Clone)]
pub struct DisplacementGrid {
    mask: Arc<UvMask>,
    values: Vec<f64>,
}

impl DisplacementGrid {
    pub fn zeros(mask: Arc<UvMask>) -> Self {
        let n = mask.resolution() * mask.resolution() * 3;
        Self {
            mask,
            values: vec![0.0; n],
        }
    }

    /// Builds a grid from one value per masked pixel, in dense order.
    pub fn from_masked(mask: Arc<UvMask>, masked: &[[f64; 3]]) -> Self {
        assert_eq!(masked.len(), mask.len());
        let mut g = Self::zeros(mask);
        for (i, &(x, y)) in g.mask.pixels().to_vec().iter().enumerate() {
            g.set(x, y, masked[i]);
        }
        g
    }

    /// Builds a grid from a full R*R*3 row-major value buffer, forcing
    /// unmasked pixels to exactly zero.
    pub fn from_full(mask: Arc<UvMask>, full: &[f64]) -> Self {
        let r = mask.resolution();
        assert_eq!(full.len(), r * r * 3);
        let mut g = Self::zeros(mask.clone());
        for &(x, y) in mask.pixels() {
            let o = (y * r + x) * 3;
            g.values[o..o + 3].copy_from_slice(&full[o..o + 3]);
        }
        g
    }

    pub fn mask(&self) -> &Arc<UvMask> {
        &self.mask
    }

    pub fn resolution(&self) -> usize {
        self.mask.resolution()
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.resolution() + x) * 3;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        assert!(
            self.mask.contains(x, y),
            "write to unmasked pixel ({x}, {y})"
        );
        let o = (y * self.resolution() + x) * 3;
        self.values[o..o + 3].copy_from_slice(&v);
    }

    /// Raw row-major R*R*3 buffer (unmasked entries are zero).
    pub fn as_full(&self) -> &[f64] {
        &self.values
    }

    /// Flattens masked values into a dense vector, pixel-major, channels
    /// contiguous per pixel. Length is 3 * mask.len().
    pub fn to_masked_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mask.len() * 3);
        for &(x, y) in self.mask.pixels() {
            let val = self.get(x, y);
            v.extend_from_slice(&val);
        }
        v
    }

    pub fn from_masked_vec(mask: Arc<UvMask>, v: &[f64]) -> Self {
        assert_eq!(v.len(), mask.len() * 3);
        let mut g = Self::zeros(mask);
        for (i, &(x, y)) in g.mask.pixels().to_vec().iter().enumerate() {
            g.set(x, y, [v[3 * i], v[3 * i + 1], v[3 * i + 2]]);
        }
        g
    }

    pub fn same_mask(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.mask, &other.mask) || *self.mask == *other.mask
    }

    /// Elementwise a*self + b*other over the mask.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self, GeometryError> {
        if !self.same_mask(other) {
            return Err(GeometryError::MaskMismatch);
        }
        let mut out = Self::zeros(self.mask.clone());
        let r = self.resolution();
        for &(x, y) in self.mask.pixels() {
            let o = (y * r + x) * 3;
            for c in 0..3 {
                out.values[o + c] = a * self.values[o + c] + b * other.values[o + c];
            }
        }
        Ok(out)
    }

    pub fn scale_in_place(&mut self, a: f64) {
        let r = self.resolution();
        for &(x, y) in self.mask.clone().pixels() {
            let o = (y * r + x) * 3;
            for c in 0..3 {
                self.values[o + c] *= a;
            }
        }
    }

    pub fn axpy_in_place(&mut self, a: f64, other: &Self) -> Result<(), GeometryError> {
        if !self.same_mask(other) {
            return Err(GeometryError::MaskMismatch);
        }
        let r = self.resolution();
        for &(x, y) in self.mask.clone().pixels() {
            let o = (y * r + x) * 3;
            for c in 0..3 {
                self.values[o + c] += a * other.values[o + c];
            }
        }
        Ok(())
    }

    /// Euclidean norm over masked values.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        let r = self.resolution();
        for &(x, y) in self.mask.pixels() {
            let o = (y * r + x) * 3;
            for c in 0..3 {
                s += self.values[o + c] * self.values[o + c];
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<(), GeometryError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::NonFiniteGrid)
        }
    }
}
