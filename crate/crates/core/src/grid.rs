//! Periodic collocation grid on the real 2n-torus.
//!
//! The domain is `[0, 2pi)^{2n}` sampled with `N` points per real axis.
//! Complex coordinates pair consecutive axes: `z_j = x_{2j-1} + i x_{2j}`
//! for `j = 1..n` (1-based axis numbering; the code uses 0-based axes
//! `2j, 2j+1` for 0-based `j`). Points are stored row-major with the last
//! axis fastest.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Complex dimension (2 or 3).
    pub n: usize,
    /// Points per real axis (even, >= 8).
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(n: usize, points_per_axis: usize) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(CoreError::InvalidGrid(format!(
                "complex dimension must be 2 or 3, got {n}"
            )));
        }
        if points_per_axis % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "points per axis must be even, got {points_per_axis}"
            )));
        }
        if points_per_axis < 8 {
            return Err(CoreError::InvalidGrid(format!(
                "points per axis must be >= 8, got {points_per_axis}"
            )));
        }
        Ok(Self { n, points_per_axis })
    }

    /// Number of real axes (2n).
    #[inline]
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    /// Total number of grid points, `N^{2n}`.
    #[inline]
    pub fn num_points(&self) -> usize {
        self.points_per_axis.pow(self.axes() as u32)
    }

    /// Grid spacing `2pi / N`.
    #[inline]
    pub fn spacing(&self) -> f64 {
        std::f64::consts::TAU / self.points_per_axis as f64
    }

    /// Stride of axis `a` (0-based, last axis fastest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.axes() - 1 - axis) as u32)
    }

    /// Coordinates of the flat index (first `axes()` entries meaningful).
    #[inline]
    pub fn coords(&self, mut idx: usize) -> [f64; 6] {
        let mut x = [0.0; 6];
        let h = self.spacing();
        for a in (0..self.axes()).rev() {
            x[a] = (idx % self.points_per_axis) as f64 * h;
            idx /= self.points_per_axis;
        }
        x
    }

    /// Flat index from per-axis integer coordinates.
    pub fn index_of(&self, ix: &[usize]) -> usize {
        debug_assert_eq!(ix.len(), self.axes());
        let mut idx = 0;
        for &i in ix {
            idx = idx * self.points_per_axis + i;
        }
        idx
    }

    /// Integer wavenumber of Fourier mode `m` on one axis:
    /// `0, 1, ..., N/2, -N/2+1, ..., -1`.
    #[inline]
    pub fn wavenumber(&self, mode: usize) -> i64 {
        let n = self.points_per_axis as i64;
        let m = mode as i64;
        if m <= n / 2 {
            m
        } else {
            m - n
        }
    }
}

/// Evaluate `exp(i <k, x>)` at a grid point given integer wave vector `k`
/// over the 2n real axes.
pub fn plane_wave(grid: &GridSpec, k: &[i32], idx: usize) -> num_complex::Complex64 {
    let x = grid.coords(idx);
    let mut phase = 0.0;
    for (a, &ka) in k.iter().enumerate() {
        phase += ka as f64 * x[a];
    }
    num_complex::Complex64::new(phase.cos(), phase.sin())
}
