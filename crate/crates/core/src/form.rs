//! Hermitian-matrix-valued fields representing real (1,1)-forms.
//!
//! Conventions (fixed once for the whole crate):
//!   d/dz = (d/dx - i d/dy)/2, so (i del delbar u)_{jk} = u_{z_j zbar_k}
//!   and the trace of i del delbar u times 4 is the real Laplacian;
//!   i dz_j wedge dzbar_j = 2 dx_j wedge dy_j, so the density of the top
//!   wedge F^n is 2^n n! det(F); integrals of top forms are grid means
//!   (the fundamental domain has volume 1).
//!
//! A form built as (constant matrix) + s * omega + i del delbar(potential)
//! remembers that decomposition; the Monge-Ampere reductions use it to
//! rewrite problems over a positive-definite background.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exterior::SpForm;
use crate::field::{ScalarField, TrigPoly};
use crate::grid::Grid;
use crate::herm::HMat;

type C64 = Complex64;

/// Decomposition self = constant + scale * metric + i del delbar(potential).
#[derive(Debug, Clone)]
pub struct ClosedSplit {
    pub base_constant: HMat,
    pub base_metric: Option<(f64, Arc<FormField>)>,
    pub potential: ScalarField,
}

#[derive(Debug, Clone)]
pub enum Comps {
    Constant(HMat),
    Varying(Vec<f64>),
}

/// Real (1,1)-form as a Hermitian matrix per grid point.
#[derive(Debug, Clone)]
pub struct FormField {
    grid: Arc<Grid>,
    comps: Comps,
    pub is_constant: bool,
    pub is_closed: bool,
    pub positive_definite: Option<bool>,
    pub(crate) split: Option<ClosedSplit>,
    pub(crate) spectral: Option<SpForm>,
}

impl FormField {
    /// Packed row length per grid point: n real diagonal entries followed by
    /// (re, im) pairs of the strict upper triangle.
    pub fn stride(n: usize) -> usize {
        n * n
    }

    pub fn constant(grid: Arc<Grid>, a: HMat) -> Self {
        debug_assert_eq!(a.dim, grid.dim());
        let spectral = Some(SpForm::from_hermitian_constant(grid.dim(), &a));
        let split = Some(ClosedSplit {
            base_constant: a,
            base_metric: None,
            potential: ScalarField::zeros(grid.clone()),
        });
        FormField {
            grid,
            comps: Comps::Constant(a),
            is_constant: true,
            is_closed: true,
            positive_definite: None,
            split,
            spectral,
        }
    }

    pub(crate) fn from_packed(
        grid: Arc<Grid>,
        data: Vec<f64>,
        is_closed: bool,
        split: Option<ClosedSplit>,
        spectral: Option<SpForm>,
    ) -> Self {
        debug_assert_eq!(data.len(), grid.len() * Self::stride(grid.dim()));
        FormField {
            grid,
            comps: Comps::Varying(data),
            is_constant: false,
            is_closed,
            positive_definite: None,
            split,
            spectral,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn comps(&self) -> &Comps {
        &self.comps
    }

    pub fn spectral(&self) -> Option<&SpForm> {
        self.spectral.as_ref()
    }

    pub fn split(&self) -> Option<&ClosedSplit> {
        self.split.as_ref()
    }

    /// Matrix at a grid point.
    #[inline]
    pub fn at(&self, idx: usize) -> HMat {
        match &self.comps {
            Comps::Constant(a) => *a,
            Comps::Varying(data) => {
                let s = Self::stride(self.dim());
                HMat::unpack(self.dim(), &data[idx * s..(idx + 1) * s])
            }
        }
    }

    /// Reconstruct the positive background part of the closed split
    /// (constant + scale * metric), if a split is known.
    pub fn split_base(&self) -> Option<FormField> {
        let split = self.split.as_ref()?;
        let base = FormField::constant(self.grid.clone(), split.base_constant);
        match &split.base_metric {
            None => Some(base),
            Some((s, omega)) => base.add_scaled(omega, *s).ok(),
        }
    }

    pub fn split_potential(&self) -> Option<&ScalarField> {
        self.split.as_ref().map(|s| &s.potential)
    }

    pub fn add(&self, other: &FormField) -> Result<FormField> {
        self.add_scaled(other, 1.0)
    }

    /// self + s * other.
    pub fn add_scaled(&self, other: &FormField, s: f64) -> Result<FormField> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("form addition".into()));
        }
        let spectral = match (&self.spectral, &other.spectral) {
            (Some(a), Some(b)) => Some(a.add(&b.scale_real(s))),
            _ => None,
        };
        let split = self.merge_split(other, s);
        let is_closed = self.is_closed && other.is_closed;
        let comps = match (&self.comps, &other.comps) {
            (Comps::Constant(a), Comps::Constant(b)) => Comps::Constant(a.add_scaled(b, s)),
            _ => {
                let n = self.dim();
                let stride = Self::stride(n);
                let len = self.grid.len() * stride;
                let mut data = vec![0.0f64; len];
                match (&self.comps, &other.comps) {
                    (Comps::Varying(a), Comps::Varying(b)) => {
                        data.par_iter_mut().enumerate().for_each(|(i, d)| {
                            *d = a[i] + s * b[i];
                        });
                    }
                    (Comps::Varying(a), Comps::Constant(bc)) => {
                        let mut brow = [0.0f64; 9];
                        bc.pack(&mut brow[..stride]);
                        data.par_chunks_mut(stride).enumerate().for_each(|(p, row)| {
                            for t in 0..stride {
                                row[t] = a[p * stride + t] + s * brow[t];
                            }
                        });
                    }
                    (Comps::Constant(ac), Comps::Varying(b)) => {
                        let mut arow = [0.0f64; 9];
                        ac.pack(&mut arow[..stride]);
                        data.par_chunks_mut(stride).enumerate().for_each(|(p, row)| {
                            for t in 0..stride {
                                row[t] = arow[t] + s * b[p * stride + t];
                            }
                        });
                    }
                    _ => unreachable!(),
                }
                Comps::Varying(data)
            }
        };
        Ok(FormField {
            grid: self.grid.clone(),
            is_constant: matches!(comps, Comps::Constant(_)),
            comps,
            is_closed,
            positive_definite: None,
            split,
            spectral,
        })
    }

    fn merge_split(&self, other: &FormField, s: f64) -> Option<ClosedSplit> {
        let a = self.split.as_ref()?;
        let b = other.split.as_ref()?;
        let base_constant = a.base_constant.add_scaled(&b.base_constant, s);
        let base_metric = match (&a.base_metric, &b.base_metric) {
            (None, None) => None,
            (Some((sa, m)), None) => Some((*sa, m.clone())),
            (None, Some((sb, m))) => Some((s * sb, m.clone())),
            (Some((sa, ma)), Some((sb, mb))) => {
                if Arc::ptr_eq(ma, mb) {
                    Some((sa + s * sb, ma.clone()))
                } else {
                    return None;
                }
            }
        };
        let potential = a.potential.add(&b.potential.scale(s)).ok()?;
        Some(ClosedSplit {
            base_constant,
            base_metric,
            potential,
        })
    }

    /// self + s * omega where omega is a metric form kept symbolic in the
    /// split (constant metrics are folded into the constant part).
    pub fn add_metric(&self, omega: &Arc<FormField>, s: f64) -> Result<FormField> {
        if omega.is_constant {
            return self.add_scaled(omega, s);
        }
        let mut out = self.add_scaled(omega, s)?;
        out.split = self.split.as_ref().and_then(|sp| {
            let base_metric = match &sp.base_metric {
                None => Some((s, omega.clone())),
                Some((s0, m)) if Arc::ptr_eq(m, omega) => Some((s0 + s, omega.clone())),
                _ => return None,
            };
            Some(ClosedSplit {
                base_constant: sp.base_constant,
                base_metric,
                potential: sp.potential.clone(),
            })
        });
        Ok(out)
    }

    /// Pointwise min eigenvalue relative to `relative_to` (None = flat).
    pub fn min_eig_field(&self, relative_to: Option<&FormField>) -> Result<ScalarField> {
        if let Some(g) = relative_to {
            if !self.grid.same_as(&g.grid) {
                return Err(Error::GridMismatch("eigenvalue reference".into()));
            }
        }
        let len = self.grid.len();
        let values: Vec<f64> = match relative_to {
            None => (0..len)
                .into_par_iter()
                .map(|i| self.at(i).min_eig())
                .collect(),
            Some(g) => {
                let out: Result<Vec<f64>> = (0..len)
                    .into_par_iter()
                    .map(|i| self.at(i).gen_min_eig(&g.at(i)))
                    .collect();
                out?
            }
        };
        ScalarField::from_values(self.grid.clone(), values)
    }

    /// Verify pointwise positive definiteness; returns the minimum eigenvalue
    /// over the grid or an error naming the worst point.
    pub fn verify_positive_definite(&mut self) -> Result<f64> {
        let len = self.grid.len();
        let (worst_idx, worst) = (0..len)
            .into_par_iter()
            .map(|i| (i, self.at(i).min_eig()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if worst <= 0.0 {
            self.positive_definite = Some(false);
            return Err(Error::NotPositiveDefinite {
                point: worst_idx,
                coords: self.grid.coords(worst_idx)[..self.grid.axes()].to_vec(),
                eigenvalue: worst,
            });
        }
        self.positive_definite = Some(true);
        Ok(worst)
    }

    /// Crude sup of matrix entries, used to scale solver tolerances.
    pub fn sup_entry_norm(&self) -> f64 {
        match &self.comps {
            Comps::Constant(a) => a.sup_entry(),
            Comps::Varying(data) => crate::reduce::sup_norm(data),
        }
    }
}

/// A Bott-Chern class representative: constant Hermitian matrix A plus the
/// potential f, realizing alpha = A + i del delbar f.
#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub a: HMat,
    pub f: TrigPoly,
}

impl ClassSpec {
    pub fn new(a: HMat, f: TrigPoly) -> Self {
        ClassSpec { a, f }
    }

    pub fn constant(a: HMat, axes: usize) -> Self {
        ClassSpec {
            a,
            f: TrigPoly::new(axes),
        }
    }
}

/// Spectral i del delbar of a trig polynomial, as a form field.
pub fn i_ddbar_spectral(grid: &Arc<Grid>, u: &TrigPoly) -> Result<FormField> {
    let n = grid.dim();
    u.check_real(1e-12)?;
    u.check_aliasing(grid)?;
    let stride = FormField::stride(n);
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(stride);
    // diagonal entries u_{z_j zbar_j} are real
    let mut diag_polys = Vec::new();
    for j in 0..n {
        diag_polys.push(u.dz(j).dzbar(j));
    }
    for p in &diag_polys {
        let vals = p.eval_grid(grid);
        planes.push(vals.iter().map(|z| z.re).collect());
    }
    // strict upper triangle, interleaved re/im
    for j in 0..n {
        for k in (j + 1)..n {
            let p = u.dz(j).dzbar(k);
            let vals = p.eval_grid(grid);
            planes.push(vals.iter().map(|z| z.re).collect());
            planes.push(vals.iter().map(|z| z.im).collect());
        }
    }
    let len = grid.len();
    let mut data = vec![0.0f64; len * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(p, row)| {
        for (t, plane) in planes.iter().enumerate() {
            row[t] = plane[p];
        }
    });
    let potential = ScalarField::from_modes(grid.clone(), u.clone())?;
    let split = Some(ClosedSplit {
        base_constant: HMat::zero(n),
        base_metric: None,
        potential,
    });
    let spectral = Some(SpForm::i_ddbar_of_scalar(n, u));
    Ok(FormField::from_packed(grid.clone(), data, true, split, spectral))
}

/// Realize the class form alpha = A + i del delbar f on the grid.
pub fn make_class_form(grid: &Arc<Grid>, spec: &ClassSpec) -> Result<FormField> {
    if spec.a.dim != grid.dim() {
        return Err(Error::DimensionMismatch(format!(
            "class matrix has dimension {}, grid has {}",
            spec.a.dim,
            grid.dim()
        )));
    }
    let constant = FormField::constant(grid.clone(), spec.a);
    if spec.f.is_zero() {
        return Ok(constant);
    }
    let hess = i_ddbar_spectral(grid, &spec.f)?;
    constant.add(&hess)
}

/// Metric construction recipes.
#[derive(Debug, Clone)]
pub enum MetricRecipe {
    /// The flat identity metric.
    Flat,
    /// omega = identity + i del delbar rho (closed, hence pluriclosed).
    Gauduchon { rho: TrigPoly },
    /// Identity plus fixed trig perturbations that are not of i del delbar
    /// shape; carries torsion for amplitude > 0.
    Generic { amplitude: f64 },
}

/// Entry polynomials of the generic (non-pluriclosed) metric perturbation.
/// Diagonal j: cos(2 pi x_{j+1}) + sin(2 pi y_{j+1}) + cos(2 pi (x_j + y_j));
/// off-diagonal (j,k): (cos(2 pi y_j) + i cos(2 pi x_k)) / 2, all scaled by
/// the amplitude. Indices wrap mod n.
fn generic_entry(n: usize, amplitude: f64, j: usize, k: usize) -> TrigPoly {
    let axes = 2 * n;
    if j == k {
        let jn = (j + 1) % n;
        let mut kx = vec![0i32; axes];
        kx[2 * jn] = 1;
        let mut ky = vec![0i32; axes];
        ky[2 * jn + 1] = 1;
        let mut kd = vec![0i32; axes];
        kd[2 * j] = 1;
        kd[2 * j + 1] = 1;
        let p = TrigPoly::cosine(axes, &kx, amplitude)
            .add(&TrigPoly::sine(axes, &ky, amplitude))
            .add(&TrigPoly::cosine(axes, &kd, amplitude));
        TrigPoly::constant(axes, 1.0).add(&p)
    } else if j < k {
        let mut kyj = vec![0i32; axes];
        kyj[2 * j + 1] = 1;
        let mut kxk = vec![0i32; axes];
        kxk[2 * k] = 1;
        TrigPoly::cosine(axes, &kyj, amplitude / 2.0).add(
            &TrigPoly::cosine(axes, &kxk, amplitude / 2.0).scale(C64::new(0.0, 1.0)),
        )
    } else {
        generic_entry(n, amplitude, k, j).conj()
    }
}

/// Construct a Hermitian metric on the grid; positivity is verified and
/// failures carry the worst point and eigenvalue.
pub fn make_hermitian_metric(grid: &Arc<Grid>, recipe: &MetricRecipe) -> Result<FormField> {
    let n = grid.dim();
    let mut omega = match recipe {
        MetricRecipe::Flat => FormField::constant(grid.clone(), HMat::identity(n)),
        MetricRecipe::Gauduchon { rho } => {
            let spec = ClassSpec::new(HMat::identity(n), rho.clone());
            make_class_form(grid, &spec)?
        }
        MetricRecipe::Generic { amplitude } => {
            let stride = FormField::stride(n);
            let mut planes: Vec<Vec<f64>> = Vec::with_capacity(stride);
            for j in 0..n {
                let p = generic_entry(n, *amplitude, j, j);
                planes.push(p.eval_grid(grid).iter().map(|z| z.re).collect());
            }
            for j in 0..n {
                for k in (j + 1)..n {
                    let p = generic_entry(n, *amplitude, j, k);
                    let vals = p.eval_grid(grid);
                    planes.push(vals.iter().map(|z| z.re).collect());
                    planes.push(vals.iter().map(|z| z.im).collect());
                }
            }
            let len = grid.len();
            let mut data = vec![0.0f64; len * stride];
            data.par_chunks_mut(stride).enumerate().for_each(|(p, row)| {
                for (t, plane) in planes.iter().enumerate() {
                    row[t] = plane[p];
                }
            });
            let spectral = SpForm::one_one_from_entries(n, &|j, k| {
                generic_entry(n, *amplitude, j, k)
            });
            FormField::from_packed(grid.clone(), data, false, None, Some(spectral))
        }
    };
    omega.verify_positive_definite()?;
    Ok(omega)
}
