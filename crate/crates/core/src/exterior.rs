//! Spectral exterior algebra of complex differential forms on the torus.
//!
//! A form is stored as a sum of terms c_{S,T} dz_S wedge dzbar_T over bit
//! masks S, T of {0..n-1}, with trig-polynomial coefficients. Because the
//! coefficients are exact Fourier data, del and delbar are exact, which is
//! what the torsion-constant estimates and the integration-by-parts checks
//! need. Everything here runs on small mode counts; the pointwise
//! mixed-discriminant pipeline is the fast path for (1,1) wedge integrals.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::TrigPoly;
use crate::grid::Grid;
use crate::herm::HMat;

type C64 = Complex64;

/// Sign of sorting the concatenation dz_A wedge dz_B into ascending order,
/// for disjoint masks.
fn merge_sign(a: u8, b: u8) -> f64 {
    let mut inversions = 0u32;
    for j in 0..8 {
        if b >> j & 1 == 1 {
            inversions += (a >> (j + 1)).count_ones();
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign of inserting dz_j in front of dz_S and sorting, j not in S.
fn insert_sign(j: u8, s: u8) -> f64 {
    let below = (s & ((1u8 << j) - 1)).count_ones();
    if below % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Complex differential form with trig-polynomial coefficients.
#[derive(Debug, Clone)]
pub struct SpForm {
    n: usize,
    terms: BTreeMap<(u8, u8), TrigPoly>,
}

impl SpForm {
    pub fn zero(n: usize) -> Self {
        SpForm {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn from_scalar(n: usize, c: TrigPoly) -> Self {
        let mut f = Self::zero(n);
        f.add_term(0, 0, c);
        f
    }

    /// The real (1,1)-form i sum H_{jk} dz_j wedge dzbar_k for a constant
    /// Hermitian matrix H.
    pub fn from_hermitian_constant(n: usize, h: &HMat) -> Self {
        let axes = 2 * n;
        let mut f = Self::zero(n);
        for j in 0..n {
            for k in 0..n {
                let c = C64::new(0.0, 1.0) * h.get(j, k);
                if c.norm() > 0.0 {
                    let mut p = TrigPoly::new(axes);
                    p.add_term([0; crate::grid::MAX_AXES], c);
                    f.add_term(1 << j, 1 << k, p);
                }
            }
        }
        f
    }

    /// The (1,1)-form i del delbar u for a real trig polynomial u.
    pub fn i_ddbar_of_scalar(n: usize, u: &TrigPoly) -> Self {
        Self::from_scalar(n, u.clone()).i_ddbar()
    }

    /// Build a (1,1)-form from per-entry coefficient polynomials
    /// H_{jk}(x) (Hermitian: H_{kj} = conj mirror is the caller's duty).
    pub fn one_one_from_entries(n: usize, entries: &dyn Fn(usize, usize) -> TrigPoly) -> Self {
        let mut f = Self::zero(n);
        for j in 0..n {
            for k in 0..n {
                let p = entries(j, k).scale(C64::new(0.0, 1.0));
                if !p.is_zero() {
                    f.add_term(1 << j, 1 << k, p);
                }
            }
        }
        f
    }

    pub fn add_term(&mut self, s: u8, t: u8, c: TrigPoly) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&(s, t)) {
            Some(existing) => {
                *existing = existing.add(&c);
                if existing.sup_bound() < 1e-300 {
                    self.terms.remove(&(s, t));
                }
            }
            None => {
                self.terms.insert((s, t), c);
            }
        }
    }

    pub fn add(&self, other: &SpForm) -> SpForm {
        let mut out = self.clone();
        for ((s, t), c) in &other.terms {
            out.add_term(*s, *t, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &SpForm) -> SpForm {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> SpForm {
        let mut out = SpForm::zero(self.n);
        for ((a, b), c) in &self.terms {
            out.terms.insert((*a, *b), c.scale(s));
        }
        out
    }

    pub fn scale_real(&self, s: f64) -> SpForm {
        self.scale(C64::new(s, 0.0))
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.terms.values().all(|c| c.sup_bound() <= tol)
    }

    /// Crude magnitude: max over terms of sum |coefficient amplitudes|.
    pub fn sup_bound(&self) -> f64 {
        self.terms
            .values()
            .map(|c| c.sup_bound())
            .fold(0.0, f64::max)
    }

    pub fn wedge(&self, other: &SpForm) -> SpForm {
        debug_assert_eq!(self.n, other.n);
        let mut out = SpForm::zero(self.n);
        for ((s1, t1), c1) in &self.terms {
            for ((s2, t2), c2) in &other.terms {
                if s1 & s2 != 0 || t1 & t2 != 0 {
                    continue;
                }
                let sign_z = merge_sign(*s1, *s2);
                let sign_zb = merge_sign(*t1, *t2);
                // moving dz_{S2} (|S2| factors) past dzbar_{T1} (|T1| factors)
                let cross = if (t1.count_ones() * s2.count_ones()) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                let coeff = c1.mul(c2).scale(C64::new(sign_z * sign_zb * cross, 0.0));
                out.add_term(s1 | s2, t1 | t2, coeff);
            }
        }
        out
    }

    pub fn wedge_pow(&self, k: usize) -> SpForm {
        let mut unit = SpForm::zero(self.n);
        unit.add_term(0, 0, TrigPoly::constant(2 * self.n, 1.0));
        let mut acc = unit;
        for _ in 0..k {
            acc = acc.wedge(self);
        }
        acc
    }

    /// Holomorphic exterior derivative.
    pub fn partial(&self) -> SpForm {
        let mut out = SpForm::zero(self.n);
        for ((s, t), c) in &self.terms {
            for j in 0..self.n as u8 {
                if s >> j & 1 == 1 {
                    continue;
                }
                let dc = c.dz(j as usize);
                if dc.is_zero() {
                    continue;
                }
                let sign = insert_sign(j, *s);
                out.add_term(s | (1 << j), *t, dc.scale(C64::new(sign, 0.0)));
            }
        }
        out
    }

    /// Antiholomorphic exterior derivative.
    pub fn partial_bar(&self) -> SpForm {
        let mut out = SpForm::zero(self.n);
        for ((s, t), c) in &self.terms {
            let pass_z = if s.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..self.n as u8 {
                if t >> j & 1 == 1 {
                    continue;
                }
                let dc = c.dzbar(j as usize);
                if dc.is_zero() {
                    continue;
                }
                let sign = pass_z * insert_sign(j, *t);
                out.add_term(*s, t | (1 << j), dc.scale(C64::new(sign, 0.0)));
            }
        }
        out
    }

    /// i del delbar of the form.
    pub fn i_ddbar(&self) -> SpForm {
        self.partial_bar().partial().scale(C64::new(0.0, 1.0))
    }

    /// Density multiplier for the canonical top term dz_1..dz_n dzbar_1..dzbar_n
    /// relative to the volume form dx_1 dy_1 .. dx_n dy_n.
    fn top_factor(n: usize) -> C64 {
        // dz_{[n]} ^ dzbar_{[n]} = (-1)^{n(n-1)/2} (-i)^n 2^n dV
        let sign = if (n * (n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let mi = C64::new(0.0, -1.0);
        let mut p = C64::new(1.0, 0.0);
        for _ in 0..n {
            p *= mi;
        }
        p * sign * (1u32 << n) as f64
    }

    /// For an (n,n)-form, the real density against dV as a trig polynomial.
    pub fn top_density(&self) -> Result<TrigPoly> {
        let full = (1u8 << self.n) - 1;
        for ((s, t), c) in &self.terms {
            if (*s, *t) != (full, full) && c.sup_bound() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "form has a non-top term at bidegree ({},{})",
                    s.count_ones(),
                    t.count_ones()
                )));
            }
        }
        let coeff = match self.terms.get(&(full, full)) {
            Some(c) => c.clone(),
            None => TrigPoly::new(2 * self.n),
        };
        let density = coeff.scale(Self::top_factor(self.n));
        density.check_real(1e-9).map_err(|_| {
            Error::NonRealField("top-degree density has a complex part".into())
        })?;
        Ok(density)
    }

    /// Evaluate the top density on a grid.
    pub fn top_density_on_grid(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.top_density()?.eval_grid_real(grid)
    }

    /// Realness defect: sup over terms of |c_{T,S} - (-1)^{|S||T|} conj(c_{S,T})|.
    pub fn realness_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for ((s, t), c) in &self.terms {
            let mirror = self
                .terms
                .get(&(*t, *s))
                .cloned()
                .unwrap_or_else(|| TrigPoly::new(2 * self.n));
            let sign = if (s.count_ones() * t.count_ones()) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            let defect = mirror.sub(&c.conj().scale(C64::new(sign, 0.0)));
            worst = worst.max(defect.sup_bound());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigPoly;
    use crate::grid::make_grid;

    fn flat_metric(n: usize) -> SpForm {
        SpForm::from_hermitian_constant(n, &HMat::identity(n))
    }

    #[test]
    fn flat_top_density_n1_n2_n3() {
        for (n, expect) in [(1usize, 2.0f64), (2, 8.0), (3, 48.0)] {
            let w = flat_metric(n);
            let top = w.wedge_pow(n).top_density().unwrap();
            let mean = top.mean();
            assert!(
                (mean.re - expect).abs() < 1e-12 && mean.im.abs() < 1e-14,
                "n={n}: got {mean}"
            );
        }
    }

    #[test]
    fn ddbar_of_scalar_matches_entry_formula() {
        // n=2, u = cos(2 pi x1): i ddbar u has only the (1,1) entry Lap/4
        let u = TrigPoly::cosine(4, &[1, 0, 0, 0], 1.0);
        let f = SpForm::i_ddbar_of_scalar(2, &u);
        let grid = make_grid(2, 8).unwrap();
        // wedge with i dz2 dzbar2 and read the density: picks out (1,1)-entry
        let mut probe = HMat::zero(2);
        probe.set(1, 1, C64::new(1.0, 0.0));
        let pf = SpForm::from_hermitian_constant(2, &probe);
        let dens = f.wedge(&pf).top_density().unwrap().eval_grid_real(&grid).unwrap();
        for idx in 0..grid.len() {
            let x = grid.position(idx)[0];
            let expect = 4.0 * (-std::f64::consts::PI.powi(2)) * (2.0 * std::f64::consts::PI * x).cos();
            assert!((dens[idx] - expect).abs() < 1e-9, "{} vs {}", dens[idx], expect);
        }
    }

    #[test]
    fn partial_squares_to_zero() {
        let u = TrigPoly::cosine(6, &[1, 0, 2, 0, 0, 1], 0.7);
        let f = SpForm::from_scalar(3, u);
        assert!(f.partial().partial().is_zero(1e-12));
        assert!(f.partial_bar().partial_bar().is_zero(1e-12));
        // i ddbar of i ddbar rho is zero (comes up as the pluriclosed check)
        let ddc = f.i_ddbar();
        assert!(ddc.partial().is_zero(1e-9));
        assert!(ddc.i_ddbar().is_zero(1e-9));
    }

    #[test]
    fn closed_form_realness() {
        let u = TrigPoly::cosine(4, &[1, 2, 0, 1], 0.4);
        let f = SpForm::i_ddbar_of_scalar(2, &u);
        assert!(f.realness_defect() < 1e-12);
    }

    #[test]
    fn wedge_anticommutes_correctly_for_one_one() {
        // real (1,1)-forms commute under wedge
        let a = SpForm::from_hermitian_constant(2, &HMat::diag(2, &[1.0, 0.0]));
        let b = SpForm::from_hermitian_constant(2, &HMat::diag(2, &[0.0, 1.0]));
        let ab = a.wedge(&b).top_density().unwrap().mean();
        let ba = b.wedge(&a).top_density().unwrap().mean();
        assert!((ab - ba).norm() < 1e-14);
        // i dz1 dzbar1 ^ i dz2 dzbar2 = 4 dV
        assert!((ab.re - 4.0).abs() < 1e-13);
    }
}
