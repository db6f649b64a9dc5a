//! Discrete differential operators and wedge-product integrals.
//!
//! Wedge integrals of (1,1)-forms are computed pointwise through mixed
//! discriminants: the density of gamma_1 ^ ... ^ gamma_n against dV is
//! 2^n n! mixed_disc(G_1, ..., G_n) of the coefficient matrices, and
//! integrals over the torus are grid means. Reductions use the deterministic
//! pairwise order from `reduce`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exterior::SpForm;
use crate::field::ScalarField;
use crate::form::{Comps, FormField, i_ddbar_spectral};
use crate::grid::{Grid, MAX_AXES};
use crate::herm::HMat;
use crate::reduce;

type C64 = Complex64;

/// Differentiation mode for the complex Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMode {
    /// Exact differentiation of the field's Fourier modes.
    Spectral,
    /// Centered second differences (O(h^2)).
    FiniteDifference,
}

/// Default contact threshold eta = max(10 h^2, 1e-6); absorbs O(h^2)
/// discretization noise in eigenvalues near the free boundary.
pub fn default_eta(grid: &Grid) -> f64 {
    let h = grid.spacing();
    (10.0 * h * h).max(1e-6)
}

/// i del delbar of a scalar field.
pub fn i_ddbar(u: &ScalarField, mode: DiffMode) -> Result<FormField> {
    match mode {
        DiffMode::Spectral => {
            let modes = u.modes().ok_or_else(|| {
                Error::SpectralRequired("spectral i del delbar needs a trig-polynomial field".into())
            })?;
            i_ddbar_spectral(u.grid(), modes)
        }
        DiffMode::FiniteDifference => {
            let grid = u.grid().clone();
            let n = grid.dim();
            let stride = FormField::stride(n);
            let vals = u.values();
            let mut data = vec![0.0f64; grid.len() * stride];
            data.par_chunks_mut(stride).enumerate().for_each(|(idx, row)| {
                let h = fd_hessian_at(&grid, vals, idx);
                h.pack(row);
            });
            Ok(FormField::from_packed(grid, data, true, None, None))
        }
    }
}

/// Centered finite-difference complex Hessian at one grid point.
pub fn fd_hessian_at(grid: &Grid, vals: &[f64], idx: usize) -> HMat {
    let n = grid.dim();
    let h = grid.spacing();
    let h2 = h * h;
    let coords = grid.coords(idx);
    let axes = grid.axes();
    let fetch = |delta: &[i32; MAX_AXES]| -> f64 {
        let mut out = 0usize;
        for axis in 0..axes {
            let c = grid.wrap(coords[axis] as i64 + delta[axis] as i64);
            out += c * grid.stride(axis);
        }
        vals[out]
    };
    let center = vals[idx];
    let mut m = HMat::zero(n);
    for j in 0..n {
        // u_{z_j zbar_j} = (d2_x + d2_y) u / 4
        let mut dxx = -2.0 * center;
        let mut dyy = -2.0 * center;
        let mut d = [0i32; MAX_AXES];
        d[2 * j] = 1;
        dxx += fetch(&d);
        d[2 * j] = -1;
        dxx += fetch(&d);
        d[2 * j] = 0;
        d[2 * j + 1] = 1;
        dyy += fetch(&d);
        d[2 * j + 1] = -1;
        dyy += fetch(&d);
        m.set(j, j, C64::new((dxx + dyy) / (4.0 * h2), 0.0));
    }
    for j in 0..n {
        for k in (j + 1)..n {
            // u_{z_j zbar_k} = ((dx_j dx_k + dy_j dy_k) + i (dx_j dy_k - dy_j dx_k)) u / 4
            let mixed = |a: usize, b: usize| -> f64 {
                let mut d = [0i32; MAX_AXES];
                d[a] = 1;
                d[b] = 1;
                let pp = fetch(&d);
                d[b] = -1;
                let pm = fetch(&d);
                d[a] = -1;
                d[b] = 1;
                let mp = fetch(&d);
                d[b] = -1;
                let mm = fetch(&d);
                (pp - pm - mp + mm) / (4.0 * h2)
            };
            let re = mixed(2 * j, 2 * k) + mixed(2 * j + 1, 2 * k + 1);
            let im = mixed(2 * j, 2 * k + 1) - mixed(2 * j + 1, 2 * k);
            m.set(j, k, C64::new(re / 4.0, im / 4.0));
        }
    }
    m
}

/// Pointwise smallest generalized eigenvalue of f against `relative_to`
/// (None = the flat metric).
pub fn eigen_min(f: &FormField, relative_to: Option<&FormField>) -> Result<ScalarField> {
    f.min_eig_field(relative_to)
}

/// Mixed discriminant of exactly n Hermitian n x n matrices: the full
/// polarization of the determinant, normalized so mixed_disc(A,...,A) = det A.
pub fn mixed_disc(mats: &[HMat]) -> Result<f64> {
    let n = mats.len();
    if n == 0 || n > 3 || mats.iter().any(|m| m.dim != n) {
        return Err(Error::DimensionMismatch(format!(
            "mixed discriminant needs exactly n matrices of dimension n (1..=3), got {} of dims {:?}",
            n,
            mats.iter().map(|m| m.dim).collect::<Vec<_>>()
        )));
    }
    Ok(mixed_disc_unchecked(mats))
}

#[inline]
fn mixed_disc_unchecked(mats: &[HMat]) -> f64 {
    match mats.len() {
        1 => mats[0].get(0, 0).re,
        2 => {
            // (1/2) sum over column assignments
            let d = |x: &HMat, y: &HMat| -> C64 {
                x.get(0, 0) * y.get(1, 1) - y.get(0, 1) * x.get(1, 0)
            };
            0.5 * (d(&mats[0], &mats[1]) + d(&mats[1], &mats[0])).re
        }
        3 => {
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            let mut acc = C64::new(0.0, 0.0);
            for p in PERMS {
                let (a, b, c) = (&mats[p[0]], &mats[p[1]], &mats[p[2]]);
                // det with column 0 from a, column 1 from b, column 2 from c
                acc += a.get(0, 0) * (b.get(1, 1) * c.get(2, 2) - c.get(1, 2) * b.get(2, 1))
                    - b.get(0, 1) * (a.get(1, 0) * c.get(2, 2) - c.get(1, 2) * a.get(2, 0))
                    + c.get(0, 2) * (a.get(1, 0) * b.get(2, 1) - b.get(1, 1) * a.get(2, 0));
            }
            acc.re / 6.0
        }
        _ => unreachable!(),
    }
}

enum FactorView<'a> {
    Constant(HMat),
    Varying(&'a [f64]),
}

fn factor_views<'a>(factors: &[(&'a FormField, usize)]) -> Result<(Arc<Grid>, Vec<(FactorView<'a>, usize)>)> {
    let grid = factors[0].0.grid().clone();
    let mut views = Vec::new();
    for (f, p) in factors {
        if !f.grid().same_as(&grid) {
            return Err(Error::GridMismatch("wedge integral factors".into()));
        }
        let v = match f.comps() {
            Comps::Constant(a) => FactorView::Constant(*a),
            Comps::Varying(data) => FactorView::Varying(data),
        };
        views.push((v, *p));
    }
    Ok((grid, views))
}

fn gather_mats(views: &[(FactorView<'_>, usize)], n: usize, stride: usize, idx: usize) -> [HMat; 3] {
    let mut mats = [HMat::zero(n); 3];
    let mut slot = 0;
    for (view, p) in views {
        let m = match view {
            FactorView::Constant(a) => *a,
            FactorView::Varying(data) => HMat::unpack(n, &data[idx * stride..(idx + 1) * stride]),
        };
        for _ in 0..*p {
            mats[slot] = m;
            slot += 1;
        }
    }
    mats
}

/// Pointwise density of the wedge of the given factors (with powers), as a
/// scalar field: 2^n n! mixed_disc at every point.
pub fn wedge_density(factors: &[(&FormField, usize)]) -> Result<ScalarField> {
    let n = factors[0].0.dim();
    let total: usize = factors.iter().map(|(_, p)| p).sum();
    if total != n {
        return Err(Error::DimensionMismatch(format!(
            "wedge powers sum to {total}, expected n = {n}"
        )));
    }
    let (grid, views) = factor_views(factors)?;
    let stride = FormField::stride(n);
    let scale = (1u32 << n) as f64 * factorial(n);
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let mats = gather_mats(&views, n, stride, idx);
            scale * mixed_disc_unchecked(&mats[..n])
        })
        .collect();
    ScalarField::from_values(grid, values)
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// Integral over the torus of the wedge of the factors (powers must sum to n).
pub fn wedge_integral(factors: &[(&FormField, usize)]) -> Result<f64> {
    let n = factors[0].0.dim();
    let total: usize = factors.iter().map(|(_, p)| p).sum();
    if total != n {
        return Err(Error::DimensionMismatch(format!(
            "wedge powers sum to {total}, expected n = {n}"
        )));
    }
    let (grid, views) = factor_views(factors)?;
    // constant fast path
    if views.iter().all(|(v, _)| matches!(v, FactorView::Constant(_))) {
        let mats = gather_mats(&views, n, FormField::stride(n), 0);
        return Ok((1u32 << n) as f64 * factorial(n) * mixed_disc_unchecked(&mats[..n]));
    }
    let stride = FormField::stride(n);
    let scale = (1u32 << n) as f64 * factorial(n);
    let sum = reduce::par_sum_fn(grid.len(), |idx| {
        let mats = gather_mats(&views, n, stride, idx);
        scale * mixed_disc_unchecked(&mats[..n])
    });
    Ok(sum / grid.len() as f64)
}

/// Integral restricted to masked points (mask true = included).
pub fn wedge_integral_masked(factors: &[(&FormField, usize)], mask: &[bool]) -> Result<f64> {
    let n = factors[0].0.dim();
    let (grid, views) = factor_views(factors)?;
    if mask.len() != grid.len() {
        return Err(Error::DimensionMismatch("mask length".into()));
    }
    let stride = FormField::stride(n);
    let scale = (1u32 << n) as f64 * factorial(n);
    let sum = reduce::par_sum_fn(grid.len(), |idx| {
        if mask[idx] {
            let mats = gather_mats(&views, n, stride, idx);
            scale * mixed_disc_unchecked(&mats[..n])
        } else {
            0.0
        }
    });
    Ok(sum / grid.len() as f64)
}

/// Integral of the top power F^n over the torus.
pub fn integrate_top(f: &FormField) -> Result<f64> {
    wedge_integral(&[(f, f.dim())])
}

/// Morse-type integral: the top density integrated over the set where the
/// smallest eigenvalue is >= -eta. The density keeps its actual value (it is
/// not clipped); eta only decides membership.
pub fn morse_integral(f: &FormField, eta: f64) -> Result<f64> {
    if eta < 0.0 {
        return Err(Error::InvalidArgument("morse tolerance must be >= 0".into()));
    }
    let n = f.dim();
    let grid = f.grid().clone();
    let scale = (1u32 << n) as f64 * factorial(n);
    let sum = reduce::par_sum_fn(grid.len(), |idx| {
        let m = f.at(idx);
        if m.min_eig() >= -eta {
            scale * m.det()
        } else {
            0.0
        }
    });
    Ok(sum / grid.len() as f64)
}

/// Inclusion mask of the Morse integral.
pub fn morse_mask(f: &FormField, eta: f64) -> Vec<bool> {
    let grid = f.grid();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| f.at(idx).min_eig() >= -eta)
        .collect()
}

/// Table of mixed wedge integrals I(j,k) = int alpha_eps^j ^ alpha^k ^
/// omega^{n-j-k} for 0 <= j+k <= n.
#[derive(Debug, Clone, Serialize)]
pub struct MixedIntegralTable {
    pub epsilon: f64,
    pub n: usize,
    pub entries: Vec<MixedIntegralEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedIntegralEntry {
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

impl MixedIntegralTable {
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.j == j && e.k == k)
            .map(|e| e.value)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("epsilon,j,k,value\n");
        for e in &self.entries {
            out.push_str(&format!("{:.17e},{},{},{:.17e}\n", self.epsilon, e.j, e.k, e.value));
        }
        out
    }
}

/// Assemble the I(j,k) table for the three ingredient forms.
pub fn mixed_integral_table(
    alpha_eps: &FormField,
    alpha: &FormField,
    omega: &FormField,
    epsilon: f64,
) -> Result<MixedIntegralTable> {
    let n = alpha.dim();
    let mut entries = Vec::new();
    for j in 0..=n {
        for k in 0..=(n - j) {
            let value = wedge_integral(&[(alpha_eps, j), (alpha, k), (omega, n - j - k)])?;
            entries.push(MixedIntegralEntry { j, k, value });
        }
    }
    Ok(MixedIntegralTable {
        epsilon,
        n,
        entries,
    })
}

/// Sampled torsion bound: the smallest M passing the strong-positivity test
/// for the inequalities -M omega^{k+1} <= i del delbar(omega^k) <= M
/// omega^{k+1} (k = 1..n-1) and, for n = 3, -M omega^3 <= i del omega ^
/// delbar omega <= M omega^3.
#[derive(Debug, Clone, Serialize)]
pub struct TorsionBounds {
    pub m_hat: f64,
    pub samples: usize,
    pub inequalities: Vec<TorsionInequality>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TorsionInequality {
    pub name: String,
    pub m_min: f64,
}

fn random_rank_one(n: usize, rng: &mut ChaCha8Rng) -> HMat {
    let mut v = [C64::new(0.0, 0.0); 3];
    for slot in v.iter_mut().take(n) {
        // Box-Muller pairs; quality is irrelevant, determinism is not
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        *slot = C64::new(
            r * (2.0 * std::f64::consts::PI * u2).cos(),
            r * (2.0 * std::f64::consts::PI * u2).sin(),
        );
    }
    let mut m = HMat::zero(n);
    for j in 0..n {
        for k in j..n {
            let e = v[j] * v[k].conj();
            m.set(j, k, e);
        }
    }
    m
}

/// Estimate the torsion constant M of the metric by bisection over the
/// sampled strong-positivity predicate. Requires a spectral metric; n >= 2.
pub fn estimate_torsion(omega: &FormField, samples: usize, seed: u64) -> Result<TorsionBounds> {
    let n = omega.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "torsion bounds need complex dimension >= 2".into(),
        ));
    }
    let sp = omega
        .spectral()
        .ok_or_else(|| Error::SpectralRequired("torsion estimate needs a spectral metric".into()))?
        .clone();
    let grid = omega.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (difference form D, comparison power p, human name); inequality is
    // -M omega^p <= D <= M omega^p on (p,p)-forms.
    let mut cases: Vec<(SpForm, usize, String)> = Vec::new();
    for k in 1..n {
        let d = sp.wedge_pow(k).i_ddbar();
        cases.push((d, k + 1, format!("i_ddbar_omega_pow_{k}")));
    }
    if n == 3 {
        let d = sp
            .partial()
            .wedge(&sp.partial_bar())
            .scale(C64::new(0.0, 1.0));
        cases.push((d, 3, "i_del_omega_wedge_delbar_omega".into()));
    }

    let mut per_ineq = Vec::new();
    for (d, p, name) in &cases {
        // wedge both sides with n-p sampled rank-one PSD constant forms
        let extra = n - p;
        let mut m_min = 0.0f64;
        let sample_count = if extra == 0 { 1 } else { samples.max(1) };
        for _ in 0..sample_count {
            let mut gamma_d = d.clone();
            let mut gamma_w = sp.wedge_pow(*p);
            for _ in 0..extra {
                let g = SpForm::from_hermitian_constant(n, &random_rank_one(n, &mut rng));
                gamma_d = gamma_d.wedge(&g);
                gamma_w = gamma_w.wedge(&g);
            }
            let d_vals = gamma_d.top_density_on_grid(grid)?;
            let w_vals = gamma_w.top_density_on_grid(grid)?;
            let w_floor = reduce::par_min(&w_vals);
            if w_floor <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "comparison density for {name} is not positive (min {w_floor:.3e})"
                )));
            }
            // bisection on the predicate: M w >= |d| at every point
            let passes = |m: f64| -> bool {
                let worst = reduce::par_min(
                    &d_vals
                        .iter()
                        .zip(w_vals.iter())
                        .map(|(d, w)| m * w - d.abs())
                        .collect::<Vec<_>>(),
                );
                worst >= -1e-13
            };
            let m_here = if passes(0.0) {
                0.0
            } else {
                let mut hi = 1e-6;
                while !passes(hi) {
                    hi *= 2.0;
                    if hi > 1e12 {
                        return Err(Error::InvalidArgument(format!(
                            "torsion bound for {name} did not stabilize"
                        )));
                    }
                }
                let mut lo = 0.0;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if passes(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            };
            m_min = m_min.max(m_here);
        }
        per_ineq.push(TorsionInequality {
            name: name.clone(),
            m_min,
        });
    }
    let m_hat = per_ineq.iter().map(|i| i.m_min).fold(0.0, f64::max);
    Ok(TorsionBounds {
        m_hat,
        samples,
        inequalities: per_ineq,
    })
}

/// Spectral projection check: a field declared trig-polynomial of degree d
/// must have no energy beyond degree d.
pub fn spectral_degree_defect(field: &ScalarField, degree: i32) -> f64 {
    let limit = (field.grid().points_per_axis() / 2) as i32;
    let mut worst = 0.0f64;
    // scan one representative shell beyond the declared degree
    let probe = (degree + 1).min(limit - 1);
    for axis in 0..field.grid().axes() {
        let mut k = [0i32; MAX_AXES];
        k[axis] = probe;
        worst = worst.max(field.fourier_coefficient(&k[..field.grid().axes()]).norm());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigPoly;
    use crate::form::{make_class_form, make_hermitian_metric, ClassSpec, MetricRecipe};
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn hm(dim: usize, entries: &[(usize, usize, f64, f64)]) -> HMat {
        let mut m = HMat::zero(dim);
        for &(j, k, re, im) in entries {
            m.set(j, k, C64::new(re, im));
        }
        m
    }

    #[test]
    fn i_ddbar_zero_and_cosine() {
        let grid = make_grid(1, 32).unwrap();
        let zero = ScalarField::zeros(grid.clone());
        let f = i_ddbar(&zero, DiffMode::Spectral).unwrap();
        assert_eq!(f.sup_entry_norm(), 0.0);
        let u = ScalarField::from_modes(grid.clone(), TrigPoly::cosine(2, &[1, 0], 1.0)).unwrap();
        let f = i_ddbar(&u, DiffMode::Spectral).unwrap();
        for idx in [0usize, 5, 17] {
            let x = grid.position(idx)[0];
            let expect = -PI * PI * (2.0 * PI * x).cos();
            assert!((f.at(idx).get(0, 0).re - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn fd_hessian_second_order_rate() {
        // spectral vs finite difference: refinement rate >= 1.9 on a random
        // degree-2 trig polynomial at n=2
        let mut errs = Vec::new();
        let poly = TrigPoly::cosine(4, &[1, 0, 2, 0], 0.3)
            .add(&TrigPoly::sine(4, &[0, 1, 1, 0], 0.2))
            .add(&TrigPoly::cosine(4, &[1, 1, 0, 2], 0.15));
        for big_n in [16usize, 32, 64] {
            let grid = make_grid(2, big_n).unwrap();
            let u = ScalarField::from_modes(grid.clone(), poly.clone()).unwrap();
            let sp = i_ddbar(&u, DiffMode::Spectral).unwrap();
            let fd = i_ddbar(&u, DiffMode::FiniteDifference).unwrap();
            let mut worst = 0.0f64;
            for idx in 0..grid.len() {
                worst = worst.max(sp.at(idx).sub(&fd.at(idx)).sup_entry());
            }
            errs.push(worst);
        }
        let rate1 = (errs[0] / errs[1]).log2();
        let rate2 = (errs[1] / errs[2]).log2();
        assert!(rate1 >= 1.9 && rate2 >= 1.9, "rates {rate1:.3}, {rate2:.3}");
    }

    #[test]
    fn fd_trace_matches_laplacian_quarter() {
        let grid = make_grid(2, 16).unwrap();
        let poly = TrigPoly::cosine(4, &[1, 0, 0, 1], 0.4);
        let u = ScalarField::from_modes(grid.clone(), poly.clone()).unwrap();
        let sp = i_ddbar(&u, DiffMode::Spectral).unwrap();
        // trace * 4 = real Laplacian; for this mode Lap u = -(2 pi)^2 * 2 * u
        for idx in [0usize, 33, 700] {
            let lap = -4.0 * PI * PI * 2.0 * u.values()[idx];
            assert!((4.0 * sp.at(idx).trace() - lap).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_disc_examples() {
        let id2 = HMat::identity(2);
        assert!((mixed_disc(&[id2, id2]).unwrap() - 1.0).abs() < 1e-15);
        let a = HMat::diag(2, &[1.0, 0.0]);
        let b = HMat::diag(2, &[0.0, 1.0]);
        assert!((mixed_disc(&[a, b]).unwrap() - 0.5).abs() < 1e-15);
        assert!(mixed_disc(&[id2]).is_err());
    }

    /// Inclusion-exclusion polarization oracle:
    /// (1/n!) sum_{S nonempty} (-1)^{n-|S|} det(sum_{i in S} A_i).
    fn mixed_disc_oracle(mats: &[HMat]) -> f64 {
        let n = mats.len();
        let mut acc = 0.0;
        for mask in 1u32..(1 << n) {
            let mut s = HMat::zero(n);
            for (i, m) in mats.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s = s.add(m);
                }
            }
            let sign = if (n as u32 - mask.count_ones()) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            acc += sign * s.det();
        }
        acc / factorial(n)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> HMat {
        let mut m = HMat::zero(n);
        for j in 0..n {
            for k in j..n {
                if j == k {
                    m.set(j, j, C64::new(rng.gen_range(-1.0..1.0), 0.0));
                } else {
                    m.set(
                        j,
                        k,
                        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    );
                }
            }
        }
        m
    }

    #[test]
    fn mixed_disc_matches_polarization_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3] {
            for _ in 0..50 {
                let mats: Vec<HMat> = (0..n).map(|_| random_hermitian(n, &mut rng)).collect();
                let got = mixed_disc(&mats).unwrap();
                let expect = mixed_disc_oracle(&mats);
                assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn mixed_disc_psd_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            // PSD matrices as v v^* sums
            let mats: Vec<HMat> = (0..3)
                .map(|_| {
                    let a = random_rank_one(3, &mut rng);
                    let b = random_rank_one(3, &mut rng);
                    a.add(&b)
                })
                .collect();
            assert!(mixed_disc(&mats).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn wedge_integral_examples() {
        let grid = make_grid(2, 8).unwrap();
        let omega = make_hermitian_metric(&grid, &MetricRecipe::Flat).unwrap();
        assert!((wedge_integral(&[(&omega, 2)]).unwrap() - 8.0).abs() < 1e-13);
        let alpha = FormField::constant(grid.clone(), HMat::diag(2, &[2.0, 0.0]));
        assert!((wedge_integral(&[(&alpha, 1), (&omega, 1)]).unwrap() - 8.0).abs() < 1e-13);
        // power mismatch
        assert!(wedge_integral(&[(&omega, 1)]).is_err());
    }

    #[test]
    fn integrate_top_examples() {
        let g1 = make_grid(1, 16).unwrap();
        let one = FormField::constant(g1.clone(), HMat::identity(1));
        assert!((integrate_top(&one).unwrap() - 2.0).abs() < 1e-14);
        // density 1 + 2 cos integrates to 2 (oscillation drops out)
        let f = TrigPoly::cosine(2, &[1, 0], -2.0 / (PI * PI));
        let alpha = make_class_form(&g1, &ClassSpec::new(HMat::identity(1), f)).unwrap();
        assert!((integrate_top(&alpha).unwrap() - 2.0).abs() < 1e-10);
        let g2 = make_grid(2, 8).unwrap();
        let id = FormField::constant(g2, HMat::identity(2));
        assert!((integrate_top(&id).unwrap() - 8.0).abs() < 1e-13);
    }

    #[test]
    fn class_independence_of_top_integral() {
        // same A, different potentials f: identical top integral (discrete Stokes)
        let grid = make_grid(2, 16).unwrap();
        let a = hm(2, &[(0, 0, 1.5, 0.0), (1, 1, 0.75, 0.0), (0, 1, 0.2, 0.1)]);
        let f1 = TrigPoly::new(4);
        let f2 = TrigPoly::cosine(4, &[1, 0, 0, 0], 0.3).add(&TrigPoly::sine(4, &[0, 2, 1, 0], 0.1));
        let det_a = a.det();
        let expect = 8.0 * det_a;
        let alpha1 = make_class_form(&grid, &ClassSpec::new(a, f1)).unwrap();
        let alpha2 = make_class_form(&grid, &ClassSpec::new(a, f2)).unwrap();
        let i1 = integrate_top(&alpha1).unwrap();
        let i2 = integrate_top(&alpha2).unwrap();
        assert!((i1 - expect).abs() < 1e-12, "{i1} vs {expect}");
        assert!((i2 - expect).abs() < 1e-10, "{i2} vs {expect}");
    }

    #[test]
    fn wedge_density_matches_exterior_engine() {
        // independent route: spectral exterior algebra densities
        let grid = make_grid(2, 8).unwrap();
        let f = TrigPoly::cosine(4, &[1, 0, 0, 0], 0.05);
        let alpha =
            make_class_form(&grid, &ClassSpec::new(hm(2, &[(0, 0, 1.0, 0.0), (1, 1, 2.0, 0.0), (0, 1, 0.3, -0.2)]), f))
                .unwrap();
        let omega = make_hermitian_metric(&grid, &MetricRecipe::Generic { amplitude: 0.1 }).unwrap();
        let via_mixed = wedge_density(&[(&alpha, 1), (&omega, 1)]).unwrap();
        let via_exterior = alpha
            .spectral()
            .unwrap()
            .wedge(omega.spectral().unwrap())
            .top_density_on_grid(&grid)
            .unwrap();
        for idx in 0..grid.len() {
            assert!(
                (via_mixed.values()[idx] - via_exterior[idx]).abs() < 1e-10,
                "mismatch at {idx}: {} vs {}",
                via_mixed.values()[idx],
                via_exterior[idx]
            );
        }
    }

    #[test]
    fn morse_integral_cases() {
        let grid = make_grid(1, 256).unwrap();
        // F >= 0 everywhere: equals the top integral
        let pos = FormField::constant(grid.clone(), HMat::diag(1, &[1.5]));
        assert!((morse_integral(&pos, 0.0).unwrap() - integrate_top(&pos).unwrap()).abs() < 1e-14);
        // density 1 + 2 cos(2 pi x): closed form 2 (2/3 + sqrt(3)/pi)
        let f = TrigPoly::cosine(2, &[1, 0], -2.0 / (PI * PI));
        let alpha = make_class_form(&grid, &ClassSpec::new(HMat::identity(1), f)).unwrap();
        let expect = 2.4359911241769174_f64; // 2 (2/3 + sqrt(3)/pi), frozen from quadrature
        let got = morse_integral(&alpha, 0.0).unwrap();
        assert!(
            (got - expect).abs() < 5e-4,
            "morse integral {got} vs closed form {expect}"
        );
        // eta = +inf includes everything
        let total = integrate_top(&alpha).unwrap();
        assert!((morse_integral(&alpha, f64::INFINITY).unwrap() - total).abs() < 1e-12);
        // n=1: off-contact density is literally negative, so restriction
        // only discards negative mass
        assert!(got >= total - 1e-12);
    }

    #[test]
    fn morse_monotone_in_eta() {
        let grid = make_grid(1, 128).unwrap();
        let f = TrigPoly::cosine(2, &[1, 0], -2.0 / (PI * PI));
        let alpha = make_class_form(&grid, &ClassSpec::new(HMat::identity(1), f)).unwrap();
        let mut prev_mask = 0usize;
        for eta in [0.0, 0.5, 1.0, 2.0] {
            let mask = morse_mask(&alpha, eta).iter().filter(|m| **m).count();
            assert!(mask >= prev_mask);
            prev_mask = mask;
        }
    }

    #[test]
    fn eigen_min_examples() {
        let grid = make_grid(2, 8).unwrap();
        let f = FormField::constant(grid.clone(), HMat::diag(2, &[1.0, 2.0]));
        let e = eigen_min(&f, None).unwrap();
        assert!((e.values()[0] - 1.0).abs() < 1e-14);
        let g = FormField::constant(grid.clone(), hm(2, &[(0, 0, 2.0, 0.0), (1, 1, 2.0, 0.0), (0, 1, 1.0, 0.0)]));
        let e = eigen_min(&g, None).unwrap();
        assert!((e.values()[5] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_min_characteristic_polynomial_oracle() {
        let grid = make_grid(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_hermitian(2, &mut rng);
            let f = FormField::constant(grid.clone(), m);
            let e = eigen_min(&f, None).unwrap().values()[0];
            // det(M - e I) must vanish
            let shifted = m.add_scaled(&HMat::identity(2), -e);
            assert!(shifted.det().abs() < 1e-10);
        }
    }

    #[test]
    fn discrete_stokes_spectral() {
        // int (i ddbar u) ^ gamma = 0 for constant gamma (u trig poly), n=2
        let grid = make_grid(2, 16).unwrap();
        let u = ScalarField::from_modes(
            grid.clone(),
            TrigPoly::cosine(4, &[1, 2, 0, 1], 0.4).add(&TrigPoly::sine(4, &[0, 0, 1, 1], 0.3)),
        )
        .unwrap();
        let ddc = i_ddbar(&u, DiffMode::Spectral).unwrap();
        let gamma = FormField::constant(grid, hm(2, &[(0, 0, 1.0, 0.0), (1, 1, 2.0, 0.0), (0, 1, 0.5, 0.25)]));
        let v = wedge_integral(&[(&ddc, 1), (&gamma, 1)]).unwrap();
        assert!(v.abs() < 1e-10, "Stokes defect {v}");
    }

    #[test]
    fn torsion_bounds() {
        let grid = make_grid(2, 8).unwrap();
        let flat = make_hermitian_metric(&grid, &MetricRecipe::Flat).unwrap();
        assert_eq!(estimate_torsion(&flat, 4, 1).unwrap().m_hat, 0.0);
        let rho = TrigPoly::cosine(4, &[1, 0, 0, 0], 0.05);
        let gaud = make_hermitian_metric(&grid, &MetricRecipe::Gauduchon { rho }).unwrap();
        let tb = estimate_torsion(&gaud, 4, 1).unwrap();
        assert!(tb.m_hat < 1e-9, "closed metric has no torsion, got {}", tb.m_hat);
        let gen = make_hermitian_metric(&grid, &MetricRecipe::Generic { amplitude: 0.1 }).unwrap();
        let tb = estimate_torsion(&gen, 2, 1).unwrap();
        assert!(tb.m_hat > 0.0);
    }

    #[test]
    fn torsion_nondecreasing_in_samples() {
        let grid = make_grid(3, 8).unwrap();
        let omega = make_hermitian_metric(&grid, &MetricRecipe::Generic { amplitude: 0.1 }).unwrap();
        let m2 = estimate_torsion(&omega, 2, 42).unwrap().m_hat;
        let m4 = estimate_torsion(&omega, 4, 42).unwrap().m_hat;
        let m8 = estimate_torsion(&omega, 8, 42).unwrap().m_hat;
        assert!(m2 > 0.0);
        assert!(m4 >= m2 - 1e-12);
        assert!(m8 >= m4 - 1e-12);
    }
}
