//! Periodic discretization of the torus fundamental domain [0,1)^{2n}.
//!
//! Complex coordinates are z_j = x_j + i y_j for j = 1..n, and the 2n real
//! axes are ordered (x_1, y_1, ..., x_n, y_n). Points are stored row-major
//! lexicographically in that axis order, so the last axis (y_n) is
//! contiguous. All index arithmetic wraps modulo N on every axis, and the
//! spacing satisfies h * N = 1 exactly.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest supported complex dimension.
pub const MAX_DIM: usize = 3;
/// Largest number of real axes (2 * MAX_DIM).
pub const MAX_AXES: usize = 2 * MAX_DIM;

/// Soft cap on total point count; keeps misconfigured runs from exhausting
/// memory (2^28 points = n=2 at N=128).
const MAX_POINTS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    points_per_axis: usize,
    len: usize,
    strides: [usize; MAX_AXES],
}

impl Grid {
    /// Build the periodic grid for complex dimension `n` (1, 2, or 3) with
    /// `points_per_axis` points on each of the 2n real axes.
    pub fn new(n: usize, points_per_axis: usize) -> Result<Arc<Grid>> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::InvalidGrid(format!(
                "complex dimension must be 1, 2, or 3, got {n}"
            )));
        }
        let big_n = points_per_axis;
        if big_n < 8 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be at least 8, got {big_n}"
            )));
        }
        if big_n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even, got {big_n}"
            )));
        }
        let axes = 2 * n;
        let mut len: usize = 1;
        for _ in 0..axes {
            len = len.checked_mul(big_n).ok_or_else(|| {
                Error::InvalidGrid(format!("grid size N^{axes} overflows with N = {big_n}"))
            })?;
            if len > MAX_POINTS {
                return Err(Error::InvalidGrid(format!(
                    "grid of {big_n}^{axes} points exceeds the supported maximum of {MAX_POINTS}"
                )));
            }
        }
        let mut strides = [0usize; MAX_AXES];
        let mut s = 1usize;
        for axis in (0..axes).rev() {
            strides[axis] = s;
            s *= big_n;
        }
        Ok(Arc::new(Grid {
            n,
            points_per_axis,
            len,
            strides,
        }))
    }

    /// Complex dimension n.
    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of real axes, 2n.
    #[inline]
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    /// Points per real axis (N).
    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Grid spacing h = 1/N.
    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Total number of grid points, N^{2n}.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major stride of the given axis.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Linear index of a coordinate tuple (coordinates in [0, N)).
    #[inline]
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.axes());
        let mut idx = 0;
        for (axis, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.points_per_axis);
            idx += c * self.strides[axis];
        }
        idx
    }

    /// Coordinate tuple of a linear index.
    #[inline]
    pub fn coords(&self, mut idx: usize) -> [usize; MAX_AXES] {
        let mut out = [0usize; MAX_AXES];
        for axis in 0..self.axes() {
            out[axis] = idx / self.strides[axis];
            idx %= self.strides[axis];
        }
        out
    }

    /// Physical position of a linear index, in [0,1)^{2n}.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; MAX_AXES] {
        let c = self.coords(idx);
        let h = self.spacing();
        let mut x = [0.0f64; MAX_AXES];
        for axis in 0..self.axes() {
            x[axis] = c[axis] as f64 * h;
        }
        x
    }

    /// Wrap a signed coordinate onto [0, N).
    #[inline]
    pub fn wrap(&self, c: i64) -> usize {
        let n = self.points_per_axis as i64;
        (((c % n) + n) % n) as usize
    }

    /// Linear index displaced by an integer step vector, wrapping on every
    /// axis.
    #[inline]
    pub fn neighbor(&self, idx: usize, delta: &[i32]) -> usize {
        let coords = self.coords(idx);
        let mut out = 0usize;
        for axis in 0..self.axes() {
            let c = self.wrap(coords[axis] as i64 + delta[axis] as i64);
            out += c * self.strides[axis];
        }
        out
    }

    /// Number of contiguous lines along the last axis.
    #[inline]
    pub fn line_count(&self) -> usize {
        self.len / self.points_per_axis
    }

    /// Squared torus distance between two points (minimum image convention).
    pub fn torus_dist2(&self, a: usize, b: usize) -> f64 {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let h = self.spacing();
        let mut d2 = 0.0;
        for axis in 0..self.axes() {
            let mut d = (ca[axis] as f64 - cb[axis] as f64).abs() * h;
            if d > 0.5 {
                d = 1.0 - d;
            }
            d2 += d * d;
        }
        d2
    }

    /// True when both grids describe the same discretization.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && self.points_per_axis == other.points_per_axis
    }
}

/// Convenience constructor mirroring the library-level naming.
pub fn make_grid(n: usize, points_per_axis: usize) -> Result<Arc<Grid>> {
    Grid::new(n, points_per_axis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_point_counts() {
        assert_eq!(make_grid(1, 16).unwrap().len(), 256);
        assert_eq!(make_grid(2, 8).unwrap().len(), 4096);
        assert_eq!(make_grid(3, 8).unwrap().len(), 262144);
    }

    #[test]
    fn spacing_exact() {
        let g = make_grid(1, 16).unwrap();
        assert_eq!(g.spacing(), 0.0625);
        assert_eq!(g.spacing() * g.points_per_axis() as f64, 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(make_grid(0, 16).is_err());
        assert!(make_grid(4, 16).is_err());
        assert!(make_grid(1, 4).is_err());
        assert!(make_grid(1, 9).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = make_grid(2, 8).unwrap();
        for idx in [0usize, 1, 17, 4095, 2048] {
            let c = g.coords(idx);
            assert_eq!(g.index(&c[..g.axes()]), idx);
        }
    }

    #[test]
    fn neighbor_wraps() {
        let g = make_grid(1, 8).unwrap();
        let idx = g.index(&[0, 7]);
        let up = g.neighbor(idx, &[0, 1]);
        assert_eq!(g.coords(up)[..2], [0, 0]);
        let down = g.neighbor(idx, &[-1, 0]);
        assert_eq!(g.coords(down)[..2], [7, 7]);
    }
}
