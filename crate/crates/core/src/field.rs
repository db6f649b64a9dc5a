//! Real scalar fields on the torus grid, specified by finite Fourier data.
//!
//! A trig polynomial is a finite sum sum_k a_k e^{2 pi i k.x} over integer
//! frequency vectors k in Z^{2n}; it is real iff a_{-k} = conj(a_k). Fields
//! built from Fourier data keep their mode list alongside the sampled grid
//! values, which makes spectral differentiation exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_AXES};
use crate::reduce;

type C64 = Complex64;

/// Frequency vector, padded with zeros beyond the grid's axes.
pub type Freq = [i32; MAX_AXES];

/// Finite Fourier sum over Z^{2n} with complex coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    axes: usize,
    terms: BTreeMap<Freq, C64>,
}

const PRUNE_TOL: f64 = 1e-300;

impl TrigPoly {
    pub fn new(axes: usize) -> Self {
        TrigPoly {
            axes,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(axes: usize, value: f64) -> Self {
        let mut p = Self::new(axes);
        p.add_term([0; MAX_AXES], C64::new(value, 0.0));
        p
    }

    /// Real cosine mode: amplitude * cos(2 pi k.x), added as a conjugate pair.
    pub fn cosine(axes: usize, k: &[i32], amplitude: f64) -> Self {
        let mut p = Self::new(axes);
        let mut kk = [0i32; MAX_AXES];
        kk[..k.len()].copy_from_slice(k);
        let mut nk = [0i32; MAX_AXES];
        for (a, b) in nk.iter_mut().zip(kk.iter()) {
            *a = -b;
        }
        p.add_term(kk, C64::new(amplitude / 2.0, 0.0));
        p.add_term(nk, C64::new(amplitude / 2.0, 0.0));
        p
    }

    /// Real sine mode: amplitude * sin(2 pi k.x).
    pub fn sine(axes: usize, k: &[i32], amplitude: f64) -> Self {
        let mut p = Self::new(axes);
        let mut kk = [0i32; MAX_AXES];
        kk[..k.len()].copy_from_slice(k);
        let mut nk = [0i32; MAX_AXES];
        for (a, b) in nk.iter_mut().zip(kk.iter()) {
            *a = -b;
        }
        p.add_term(kk, C64::new(0.0, -amplitude / 2.0));
        p.add_term(nk, C64::new(0.0, amplitude / 2.0));
        p
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn add_term(&mut self, k: Freq, amp: C64) {
        let entry = self.terms.entry(k).or_insert(C64::new(0.0, 0.0));
        *entry += amp;
        if entry.norm() < PRUNE_TOL {
            self.terms.remove(&k);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Freq, &C64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &TrigPoly) -> TrigPoly {
        debug_assert_eq!(self.axes, other.axes);
        let mut out = self.clone();
        for (k, a) in &other.terms {
            out.add_term(*k, *a);
        }
        out
    }

    pub fn sub(&self, other: &TrigPoly) -> TrigPoly {
        let mut out = self.clone();
        for (k, a) in &other.terms {
            out.add_term(*k, -*a);
        }
        out
    }

    pub fn scale(&self, s: C64) -> TrigPoly {
        let mut out = TrigPoly::new(self.axes);
        for (k, a) in &self.terms {
            out.add_term(*k, a * s);
        }
        out
    }

    pub fn scale_real(&self, s: f64) -> TrigPoly {
        self.scale(C64::new(s, 0.0))
    }

    /// Product (mode convolution).
    pub fn mul(&self, other: &TrigPoly) -> TrigPoly {
        let mut out = TrigPoly::new(self.axes);
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let mut k = [0i32; MAX_AXES];
                for a in 0..MAX_AXES {
                    k[a] = ka[a] + kb[a];
                }
                out.add_term(k, va * vb);
            }
        }
        out.prune(1e-18 * self.sup_bound().max(1.0) * other.sup_bound().max(1.0));
        out
    }

    pub fn conj(&self) -> TrigPoly {
        let mut out = TrigPoly::new(self.axes);
        for (k, a) in &self.terms {
            let mut nk = [0i32; MAX_AXES];
            for (t, s) in nk.iter_mut().zip(k.iter()) {
                *t = -s;
            }
            out.add_term(nk, a.conj());
        }
        out
    }

    /// d/dz_j = (d/dx_j - i d/dy_j)/2 acting on complex coordinate j.
    pub fn dz(&self, j: usize) -> TrigPoly {
        let mut out = TrigPoly::new(self.axes);
        for (k, a) in &self.terms {
            let kx = k[2 * j] as f64;
            let ky = k[2 * j + 1] as f64;
            let mult = C64::new(PI * ky, PI * kx);
            if mult.norm_sqr() > 0.0 {
                out.add_term(*k, a * mult);
            }
        }
        out
    }

    /// d/dzbar_j = (d/dx_j + i d/dy_j)/2.
    pub fn dzbar(&self, j: usize) -> TrigPoly {
        let mut out = TrigPoly::new(self.axes);
        for (k, a) in &self.terms {
            let kx = k[2 * j] as f64;
            let ky = k[2 * j + 1] as f64;
            let mult = C64::new(-PI * ky, PI * kx);
            if mult.norm_sqr() > 0.0 {
                out.add_term(*k, a * mult);
            }
        }
        out
    }

    /// Max |k_a| over all terms and axes.
    pub fn degree(&self) -> i32 {
        self.terms
            .keys()
            .flat_map(|k| k.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Coefficient of the zero mode.
    pub fn mean(&self) -> C64 {
        self.terms
            .get(&[0; MAX_AXES])
            .copied()
            .unwrap_or(C64::new(0.0, 0.0))
    }

    /// sum |a_k|; a crude sup-norm bound.
    pub fn sup_bound(&self) -> f64 {
        self.terms.values().map(|a| a.norm()).sum()
    }

    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, a| a.norm() > tol);
    }

    /// Check the conjugate-pair symmetry that makes the evaluation real.
    pub fn check_real(&self, tol: f64) -> Result<()> {
        let scale = self.sup_bound().max(1.0);
        for (k, a) in &self.terms {
            let mut nk = [0i32; MAX_AXES];
            for (t, s) in nk.iter_mut().zip(k.iter()) {
                *t = -s;
            }
            let mirror = self.terms.get(&nk).copied().unwrap_or(C64::new(0.0, 0.0));
            let defect = (mirror - a.conj()).norm();
            if defect > tol * scale {
                return Err(Error::NonRealField(format!(
                    "coefficient at {:?} is not the conjugate of the one at {:?} (defect {:.3e})",
                    nk, k, defect
                )));
            }
        }
        Ok(())
    }

    /// Reject frequencies at or above the grid Nyquist limit N/2.
    pub fn check_aliasing(&self, grid: &Grid) -> Result<()> {
        let limit = (grid.points_per_axis() / 2) as i32;
        for k in self.terms.keys() {
            for (axis, &freq) in k.iter().enumerate().take(grid.axes()) {
                if freq.abs() >= limit {
                    return Err(Error::Aliasing {
                        mode: k[..grid.axes()].to_vec(),
                        axis,
                        freq: freq.abs(),
                        limit,
                    });
                }
            }
            for &freq in &k[grid.axes()..] {
                if freq != 0 {
                    return Err(Error::DimensionMismatch(format!(
                        "mode {:?} uses axes beyond the grid's 2n = {}",
                        k,
                        grid.axes()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluate on every grid point (complex result).
    pub fn eval_grid(&self, grid: &Grid) -> Vec<C64> {
        let len = grid.len();
        let n_ax = grid.axes();
        let big_n = grid.points_per_axis();
        let mut out = vec![C64::new(0.0, 0.0); len];
        if self.terms.is_empty() {
            return out;
        }
        // Per-term, per-axis phase tables.
        let terms: Vec<(&Freq, &C64)> = self.terms.iter().collect();
        let tables: Vec<Vec<Vec<C64>>> = terms
            .iter()
            .map(|(k, _)| {
                (0..n_ax)
                    .map(|axis| {
                        (0..big_n)
                            .map(|c| {
                                let phase = 2.0 * PI * k[axis] as f64 * c as f64
                                    / big_n as f64;
                                C64::new(phase.cos(), phase.sin())
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let line = big_n;
        out.par_chunks_mut(line).enumerate().for_each(|(li, chunk)| {
            let base = li * line;
            let coords = grid.coords(base);
            for (t, (_, amp)) in terms.iter().enumerate() {
                let mut prefix = **amp;
                for axis in 0..n_ax - 1 {
                    prefix *= tables[t][axis][coords[axis]];
                }
                let tab_last = &tables[t][n_ax - 1];
                for (c, slot) in chunk.iter_mut().enumerate() {
                    *slot += prefix * tab_last[c];
                }
            }
        });
        out
    }

    /// Evaluate as a real field, rejecting non-real data.
    pub fn eval_grid_real(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.check_real(1e-12)?;
        self.check_aliasing(grid)?;
        let complex = self.eval_grid(grid);
        let scale = self.sup_bound().max(1.0);
        let worst_im = reduce::par_max(&complex.iter().map(|z| z.im.abs()).collect::<Vec<_>>());
        if worst_im > 1e-10 * scale {
            return Err(Error::NonRealField(format!(
                "imaginary residue {:.3e} after evaluation",
                worst_im
            )));
        }
        Ok(complex.into_iter().map(|z| z.re).collect())
    }
}

/// Real scalar field on a grid: sampled values plus (when built from Fourier
/// data) the generating trig polynomial.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    modes: Option<TrigPoly>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let len = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; len],
            modes: Some(TrigPoly::new(0).clone_with_axes(0)),
        }
        .normalize_zero_modes()
    }

    fn normalize_zero_modes(mut self) -> Self {
        // zeros() carries an empty mode list with the right axis count
        let axes = self.grid.axes();
        self.modes = Some(TrigPoly::new(axes));
        self
    }

    /// Build from Fourier modes; validates realness and aliasing.
    pub fn from_modes(grid: Arc<Grid>, poly: TrigPoly) -> Result<Self> {
        if poly.axes() != grid.axes() {
            return Err(Error::DimensionMismatch(format!(
                "poly has {} axes, grid has {}",
                poly.axes(),
                grid.axes()
            )));
        }
        let values = poly.eval_grid_real(&grid)?;
        Ok(ScalarField {
            grid,
            values,
            modes: Some(poly),
        })
    }

    /// Build from raw values (no spectral data attached).
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "scalar field contains non-finite values".into(),
            ));
        }
        Ok(ScalarField {
            grid,
            values,
            modes: None,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn modes(&self) -> Option<&TrigPoly> {
        self.modes.as_ref()
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(a, b)| a + b)
            .collect();
        let modes = match (&self.modes, &other.modes) {
            (Some(a), Some(b)) => Some(a.add(b)),
            _ => None,
        };
        Ok(ScalarField {
            grid: self.grid.clone(),
            values,
            modes,
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(a, b)| a - b)
            .collect();
        let modes = match (&self.modes, &other.modes) {
            (Some(a), Some(b)) => Some(a.sub(b)),
            _ => None,
        };
        Ok(ScalarField {
            grid: self.grid.clone(),
            values,
            modes,
        })
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|v| v * s).collect(),
            modes: self.modes.as_ref().map(|m| m.scale_real(s)),
        }
    }

    pub fn shift_by(&self, offset: f64) -> ScalarField {
        let mut modes = self.modes.clone();
        if let Some(m) = modes.as_mut() {
            m.add_term([0; MAX_AXES], C64::new(offset, 0.0));
        }
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|v| v + offset).collect(),
            modes,
        }
    }

    /// Pointwise map; drops spectral data.
    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|v| f(*v)).collect(),
            modes: None,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        reduce::sup_norm(&self.values)
    }

    pub fn mean(&self) -> f64 {
        reduce::mean(&self.values)
    }

    pub fn mean_abs(&self) -> f64 {
        reduce::par_sum_fn(self.values.len(), |i| self.values[i].abs()) / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        reduce::par_max(&self.values)
    }

    pub fn min(&self) -> f64 {
        reduce::par_min(&self.values)
    }

    /// Field translated by one grid step along `axis` (periodicity tests).
    pub fn translate(&self, axis: usize, steps: i32) -> ScalarField {
        let grid = &self.grid;
        let mut delta = [0i32; MAX_AXES];
        delta[axis] = steps;
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| self.values[grid.neighbor(i, &delta[..grid.axes()])])
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
            modes: None,
        }
    }

    /// Forward transform: Fourier coefficient at frequency k, i.e. the grid
    /// mean of value * e^{-2 pi i k.x}. Exact for trig polynomials below the
    /// Nyquist limit.
    pub fn fourier_coefficient(&self, k: &[i32]) -> C64 {
        let grid = &self.grid;
        let n_ax = grid.axes();
        let big_n = grid.points_per_axis();
        let tables: Vec<Vec<C64>> = (0..n_ax)
            .map(|axis| {
                (0..big_n)
                    .map(|c| {
                        let phase = -2.0 * PI * k[axis] as f64 * c as f64 / big_n as f64;
                        C64::new(phase.cos(), phase.sin())
                    })
                    .collect()
            })
            .collect();
        let line = big_n;
        let lines = grid.line_count();
        let re = reduce::par_sum_fn(lines, |li| {
            let base = li * line;
            let coords = grid.coords(base);
            let mut prefix = C64::new(1.0, 0.0);
            for axis in 0..n_ax - 1 {
                prefix *= tables[axis][coords[axis]];
            }
            let mut s = C64::new(0.0, 0.0);
            for c in 0..line {
                s += self.values[base + c] * tables[n_ax - 1][c];
            }
            (prefix * s).re
        });
        let im = reduce::par_sum_fn(lines, |li| {
            let base = li * line;
            let coords = grid.coords(base);
            let mut prefix = C64::new(1.0, 0.0);
            for axis in 0..n_ax - 1 {
                prefix *= tables[axis][coords[axis]];
            }
            let mut s = C64::new(0.0, 0.0);
            for c in 0..line {
                s += self.values[base + c] * tables[n_ax - 1][c];
            }
            (prefix * s).im
        });
        C64::new(re, im) / grid.len() as f64
    }

    /// Project onto all modes with |k_a| <= max_degree on every axis.
    pub fn project_modes(&self, max_degree: i32) -> TrigPoly {
        let n_ax = self.grid.axes();
        let mut poly = TrigPoly::new(n_ax);
        let mut k = [0i32; MAX_AXES];
        self.project_rec(0, max_degree, &mut k, &mut poly);
        poly.prune(1e-14 * self.sup_norm().max(1.0));
        poly
    }

    fn project_rec(&self, axis: usize, d: i32, k: &mut Freq, poly: &mut TrigPoly) {
        if axis == self.grid.axes() {
            let amp = self.fourier_coefficient(&k[..self.grid.axes()]);
            poly.add_term(*k, amp);
            return;
        }
        for f in -d..=d {
            k[axis] = f;
            self.project_rec(axis + 1, d, k, poly);
        }
        k[axis] = 0;
    }

    /// Multilinear periodic interpolation onto a finer (or equal) grid of the
    /// same complex dimension. Fields with spectral data are re-evaluated
    /// exactly instead.
    pub fn prolong_to(&self, fine: Arc<Grid>) -> Result<ScalarField> {
        if fine.dim() != self.grid.dim() {
            return Err(Error::GridMismatch(
                "prolongation requires equal complex dimension".into(),
            ));
        }
        if fine.same_as(&self.grid) {
            return Ok(ScalarField {
                grid: fine,
                values: self.values.clone(),
                modes: self.modes.clone(),
            });
        }
        if let Some(modes) = &self.modes {
            return ScalarField::from_modes(fine, modes.clone());
        }
        let nc = self.grid.points_per_axis() as f64;
        let nf = fine.points_per_axis() as f64;
        let ratio = nc / nf;
        let axes = fine.axes();
        let coarse = self.grid.clone();
        let values: Vec<f64> = (0..fine.len())
            .into_par_iter()
            .map(|idx| {
                let cf = fine.coords(idx);
                let mut lo = [0usize; MAX_AXES];
                let mut w = [0.0f64; MAX_AXES];
                for a in 0..axes {
                    let x = cf[a] as f64 * ratio;
                    let fl = x.floor();
                    lo[a] = coarse.wrap(fl as i64);
                    w[a] = x - fl;
                }
                let corners = 1usize << axes;
                let mut acc = 0.0;
                for corner in 0..corners {
                    let mut weight = 1.0;
                    let mut coords = [0usize; MAX_AXES];
                    for a in 0..axes {
                        if corner >> a & 1 == 1 {
                            weight *= w[a];
                            coords[a] = coarse.wrap(lo[a] as i64 + 1);
                        } else {
                            weight *= 1.0 - w[a];
                            coords[a] = lo[a];
                        }
                    }
                    if weight != 0.0 {
                        acc += weight * self.values[coarse.index(&coords[..axes])];
                    }
                }
                acc
            })
            .collect();
        ScalarField::from_values(fine, values)
    }

    fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "n={} N={} vs n={} N={}",
                self.grid.dim(),
                self.grid.points_per_axis(),
                other.grid.dim(),
                other.grid.points_per_axis()
            )));
        }
        Ok(())
    }
}

impl TrigPoly {
    fn clone_with_axes(&self, axes: usize) -> TrigPoly {
        let mut p = self.clone();
        p.axes = axes;
        p
    }
}

/// Build a field from a list of (frequency, complex amplitude) pairs.
pub fn field_from_fourier(
    grid: Arc<Grid>,
    modes: &[(Vec<i32>, C64)],
) -> Result<ScalarField> {
    let axes = grid.axes();
    let mut poly = TrigPoly::new(axes);
    for (k, amp) in modes {
        if k.len() != axes {
            return Err(Error::DimensionMismatch(format!(
                "mode {:?} has {} components, expected {}",
                k,
                k.len(),
                axes
            )));
        }
        let mut kk = [0i32; MAX_AXES];
        kk[..axes].copy_from_slice(k);
        poly.add_term(kk, *amp);
    }
    ScalarField::from_modes(grid, poly)
}
