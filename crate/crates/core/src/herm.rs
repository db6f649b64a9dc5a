//! Small Hermitian matrices (dimension 1..=3) with closed-form determinants,
//! eigenvalues, and Cholesky factors. These sit in the per-grid-point hot
//! loops, so everything is fixed-size and allocation-free.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[inline]
fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Hermitian n x n matrix, n in {1,2,3}. Entries beyond `dim` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HMat {
    pub dim: usize,
    m: [[C64; 3]; 3],
}

impl HMat {
    pub fn zero(dim: usize) -> Self {
        HMat {
            dim,
            m: [[C64::new(0.0, 0.0); 3]; 3],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zero(dim);
        for j in 0..dim {
            out.m[j][j] = c(1.0, 0.0);
        }
        out
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut out = Self::zero(dim);
        for j in 0..dim {
            out.m[j][j] = c(s, 0.0);
        }
        out
    }

    pub fn diag(dim: usize, d: &[f64]) -> Self {
        let mut out = Self::zero(dim);
        for j in 0..dim {
            out.m[j][j] = c(d[j], 0.0);
        }
        out
    }

    /// Build from full rows, verifying Hermitian symmetry to `tol` and then
    /// symmetrizing M <- (M + M^*)/2.
    pub fn from_rows(rows: &[Vec<C64>], tol: f64) -> Result<Self> {
        let dim = rows.len();
        if !(1..=3).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix of dimension 1..=3, got {} rows",
                dim
            )));
        }
        let mut worst = 0.0f64;
        let mut out = Self::zero(dim);
        for j in 0..dim {
            for k in 0..dim {
                let asym = (rows[j][k] - rows[k][j].conj()).norm();
                worst = worst.max(asym);
                out.m[j][k] = 0.5 * (rows[j][k] + rows[k][j].conj());
            }
        }
        if worst > tol {
            return Err(Error::NonHermitian(worst));
        }
        Ok(out)
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> C64 {
        self.m[j][k]
    }

    /// Set entry (j,k) and its conjugate mirror.
    pub fn set(&mut self, j: usize, k: usize, v: C64) {
        if j == k {
            self.m[j][j] = c(v.re, 0.0);
        } else {
            self.m[j][k] = v;
            self.m[k][j] = v.conj();
        }
    }

    pub fn add(&self, other: &HMat) -> HMat {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for j in 0..self.dim {
            for k in 0..self.dim {
                out.m[j][k] += other.m[j][k];
            }
        }
        out
    }

    pub fn sub(&self, other: &HMat) -> HMat {
        let mut out = *self;
        for j in 0..self.dim {
            for k in 0..self.dim {
                out.m[j][k] -= other.m[j][k];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> HMat {
        let mut out = *self;
        for j in 0..self.dim {
            for k in 0..self.dim {
                out.m[j][k] *= s;
            }
        }
        out
    }

    pub fn add_scaled(&self, other: &HMat, s: f64) -> HMat {
        let mut out = *self;
        for j in 0..self.dim {
            for k in 0..self.dim {
                out.m[j][k] += other.m[j][k] * s;
            }
        }
        out
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        let mut t = 0.0;
        for j in 0..self.dim {
            t += self.m[j][j].re;
        }
        t
    }

    /// Determinant; real for Hermitian matrices.
    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            1 => m[0][0].re,
            2 => m[0][0].re * m[1][1].re - m[0][1].norm_sqr(),
            3 => {
                let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                d.re
            }
            _ => unreachable!(),
        }
    }

    /// Eigenvalues in ascending order (only the first `dim` slots are valid).
    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = &self.m;
        match self.dim {
            1 => [m[0][0].re, 0.0, 0.0],
            2 => {
                let a = m[0][0].re;
                let d = m[1][1].re;
                let off = m[0][1].norm_sqr();
                let mean = 0.5 * (a + d);
                let disc = (0.25 * (a - d) * (a - d) + off).sqrt();
                [mean - disc, mean + disc, 0.0]
            }
            3 => {
                // Trigonometric closed form for 3x3 Hermitian eigenvalues.
                let p1 = m[0][1].norm_sqr() + m[0][2].norm_sqr() + m[1][2].norm_sqr();
                let (a, b, d) = (m[0][0].re, m[1][1].re, m[2][2].re);
                if p1 <= 1e-300 {
                    let mut e = [a, b, d];
                    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    return e;
                }
                let q = (a + b + d) / 3.0;
                let p2 =
                    (a - q) * (a - q) + (b - q) * (b - q) + (d - q) * (d - q) + 2.0 * p1;
                let p = (p2 / 6.0).sqrt();
                let bb = self.add_scaled(&HMat::identity(3), -q).scale(1.0 / p);
                let r = (bb.det() / 2.0).clamp(-1.0, 1.0);
                let phi = r.acos() / 3.0;
                let e1 = q + 2.0 * p * phi.cos();
                let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
                let e2 = 3.0 * q - e1 - e3;
                let mut e = [e1, e2, e3];
                e.sort_by(|x, y| x.partial_cmp(y).unwrap());
                e
            }
            _ => unreachable!(),
        }
    }

    #[inline]
    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    #[inline]
    pub fn max_eig(&self) -> f64 {
        self.eigenvalues()[self.dim - 1]
    }

    /// Cholesky factor L with self = L L^*, or None if not positive definite.
    pub fn cholesky(&self) -> Option<CMat> {
        let dim = self.dim;
        let mut l = CMat::zero(dim);
        for j in 0..dim {
            let mut s = self.m[j][j].re;
            for k in 0..j {
                s -= l.m[j][k].norm_sqr();
            }
            if s <= 0.0 {
                return None;
            }
            let ljj = s.sqrt();
            l.m[j][j] = c(ljj, 0.0);
            for i in (j + 1)..dim {
                let mut v = self.m[i][j];
                for k in 0..j {
                    v -= l.m[i][k] * l.m[j][k].conj();
                }
                l.m[i][j] = v / ljj;
            }
        }
        Some(l)
    }

    /// Hermitian inverse, None when |det| is numerically zero.
    pub fn inverse(&self) -> Option<HMat> {
        let det = self.det();
        if det.abs() < 1e-300 {
            return None;
        }
        let m = &self.m;
        let mut out = HMat::zero(self.dim);
        match self.dim {
            1 => out.m[0][0] = c(1.0 / det, 0.0),
            2 => {
                out.m[0][0] = m[1][1] / det;
                out.m[1][1] = m[0][0] / det;
                out.m[0][1] = -m[0][1] / det;
                out.m[1][0] = -m[1][0] / det;
            }
            3 => {
                for j in 0..3 {
                    for k in 0..3 {
                        // cofactor expansion; adj = cofactor transpose
                        let (r1, r2) = match k {
                            0 => (1, 2),
                            1 => (0, 2),
                            _ => (0, 1),
                        };
                        let (c1, c2) = match j {
                            0 => (1, 2),
                            1 => (0, 2),
                            _ => (0, 1),
                        };
                        let minor = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
                        let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
                        out.m[j][k] = minor * sign / det;
                    }
                }
            }
            _ => unreachable!(),
        }
        Some(out)
    }

    /// Real quadratic form v^* M v.
    #[inline]
    pub fn quad_form(&self, v: &[C64]) -> f64 {
        let mut s = C64::new(0.0, 0.0);
        for j in 0..self.dim {
            for k in 0..self.dim {
                s += v[j].conj() * self.m[j][k] * v[k];
            }
        }
        s.re
    }

    /// Smallest generalized eigenvalue of (self, g), g positive definite:
    /// smallest lambda with det(self - lambda g) = 0.
    pub fn gen_min_eig(&self, g: &HMat) -> Result<f64> {
        Ok(self.gen_eigenvalues(g)?[0])
    }

    /// Generalized eigenvalues of (self, g) in ascending order.
    pub fn gen_eigenvalues(&self, g: &HMat) -> Result<[f64; 3]> {
        let l = g.cholesky().ok_or_else(|| Error::NotPositiveDefinite {
            point: 0,
            coords: vec![],
            eigenvalue: g.min_eig(),
        })?;
        // M = L^{-1} self L^{-*}; solve L Y = self, then L Z = Y^*, M = Z^*.
        let y = l.solve_lower_multi(&CMat::from_herm(self));
        let z = l.solve_lower_multi(&y.adjoint());
        let m = z.adjoint().hermitian_part(self.dim);
        Ok(m.eigenvalues())
    }

    /// Pack into the row-length-n^2 layout used by varying form fields:
    /// [diag_0..diag_{n-1}, re_{01}, im_{01}, re_{02}, im_{02}, re_{12}, im_{12}].
    pub fn pack(&self, out: &mut [f64]) {
        let dim = self.dim;
        debug_assert_eq!(out.len(), dim * dim);
        for j in 0..dim {
            out[j] = self.m[j][j].re;
        }
        let mut p = dim;
        for j in 0..dim {
            for k in (j + 1)..dim {
                out[p] = self.m[j][k].re;
                out[p + 1] = self.m[j][k].im;
                p += 2;
            }
        }
    }

    pub fn unpack(dim: usize, data: &[f64]) -> HMat {
        debug_assert_eq!(data.len(), dim * dim);
        let mut out = HMat::zero(dim);
        for j in 0..dim {
            out.m[j][j] = c(data[j], 0.0);
        }
        let mut p = dim;
        for j in 0..dim {
            for k in (j + 1)..dim {
                out.m[j][k] = c(data[p], data[p + 1]);
                out.m[k][j] = c(data[p], -data[p + 1]);
                p += 2;
            }
        }
        out
    }

    /// Max absolute entry.
    pub fn sup_entry(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.dim {
            for k in 0..self.dim {
                m = m.max(self.m[j][k].norm());
            }
        }
        m
    }
}

/// Coefficient vector c with dot(c, packed) = v^* M v for the packed layout.
pub fn quad_form_coeffs(dim: usize, v: &[C64]) -> [f64; 9] {
    let mut out = [0.0f64; 9];
    for j in 0..dim {
        out[j] = v[j].norm_sqr();
    }
    let mut p = dim;
    for j in 0..dim {
        for k in (j + 1)..dim {
            let w = v[j].conj() * v[k];
            out[p] = 2.0 * w.re;
            out[p + 1] = -2.0 * w.im;
            p += 2;
        }
    }
    out
}

/// General (not necessarily Hermitian) small complex matrix; used only as an
/// intermediate for triangular solves.
#[derive(Debug, Clone, Copy)]
pub struct CMat {
    pub dim: usize,
    m: [[C64; 3]; 3],
}

impl CMat {
    pub fn zero(dim: usize) -> Self {
        CMat {
            dim,
            m: [[C64::new(0.0, 0.0); 3]; 3],
        }
    }

    pub fn from_herm(h: &HMat) -> Self {
        let mut out = Self::zero(h.dim);
        for j in 0..h.dim {
            for k in 0..h.dim {
                out.m[j][k] = h.m[j][k];
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = Self::zero(self.dim);
        for j in 0..self.dim {
            for k in 0..self.dim {
                out.m[j][k] = self.m[k][j].conj();
            }
        }
        out
    }

    /// Solve L X = B column-wise where self is lower triangular.
    pub fn solve_lower_multi(&self, b: &CMat) -> CMat {
        let dim = self.dim;
        let mut x = CMat::zero(dim);
        for col in 0..dim {
            for row in 0..dim {
                let mut v = b.m[row][col];
                for k in 0..row {
                    v -= self.m[row][k] * x.m[k][col];
                }
                x.m[row][col] = v / self.m[row][row];
            }
        }
        x
    }

    /// Symmetrize into a Hermitian matrix (kills rounding asymmetry).
    pub fn hermitian_part(&self, dim: usize) -> HMat {
        let mut out = HMat::zero(dim);
        for j in 0..dim {
            for k in 0..dim {
                out.m[j][k] = 0.5 * (self.m[j][k] + self.m[k][j].conj());
            }
        }
        out
    }
}
