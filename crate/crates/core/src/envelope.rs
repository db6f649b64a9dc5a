//! Quasi-psh envelopes via a monotone wide-stencil obstacle iteration.
//!
//! The envelope of the zero obstacle in the class of (beta_eps)-psh
//! functions is computed as the fixed point of the Euler map
//!
//!   u <- min(obstacle, u + tau * lambda_min(u)),
//!   lambda_min(u)(x) = min_v [ B(x)(v, vbar) + (d2_v u + d2_{iv} u)/(4 h^2) ] / |v|^2,
//!
//! where v runs over a stencil of complex lattice directions, d2_w is the
//! periodic second difference along the real direction of w with step h,
//! and tau <= h^2 keeps the map order-preserving. The fixed point satisfies
//! u <= obstacle, lambda_min(u) >= 0, and the complementarity
//! lambda_min(u) = 0 where u < obstacle, independent of tau.
//!
//! Sweeps are Jacobi style (a pure map of the previous field), so they
//! parallelize over grid points without ordering sensitivity.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{default_eta, fd_hessian_at};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::form::{Comps, FormField};
use crate::grid::{Grid, MAX_AXES};
use crate::herm::quad_form_coeffs;
use crate::reduce;

type C64 = Complex64;

/// One stencil direction: a complex lattice vector v plus precomputed
/// displacement and quadratic-form data.
#[derive(Debug, Clone)]
pub struct StencilDir {
    /// (re, im) components of v per complex coordinate.
    pub v: [(i32, i32); 3],
    /// Real displacement of v on the 2n axes.
    pub step_v: [i32; MAX_AXES],
    /// Real displacement of i v.
    pub step_iv: [i32; MAX_AXES],
    /// Packed quadratic-form coefficients, already divided by |v|^2.
    pub quad: [f64; 9],
    /// 1/|v|^2.
    pub inv_norm2: f64,
}

/// Set of stencil directions with coordinate moduli <= radius, deduplicated
/// up to unit-phase scaling {v, iv, -v, -iv}.
#[derive(Debug, Clone)]
pub struct StencilSet {
    pub n: usize,
    pub radius: i32,
    pub dirs: Vec<StencilDir>,
}

impl StencilSet {
    pub fn new(n: usize, radius: i32) -> Result<StencilSet> {
        if !(1..=3).contains(&n) || radius < 1 {
            return Err(Error::InvalidArgument(format!(
                "stencil needs n in 1..=3 and radius >= 1, got n={n}, r={radius}"
            )));
        }
        // Gaussian integers of modulus <= radius per coordinate.
        let mut comps: Vec<(i32, i32)> = Vec::new();
        for a in -radius..=radius {
            for b in -radius..=radius {
                if a * a + b * b <= radius * radius {
                    comps.push((a, b));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut dirs = Vec::new();
        let total = comps.len().pow(n as u32);
        for code in 0..total {
            let mut v = [(0i32, 0i32); 3];
            let mut c = code;
            for slot in v.iter_mut().take(n) {
                *slot = comps[c % comps.len()];
                c /= comps.len();
            }
            if v.iter().all(|&(a, b)| a == 0 && b == 0) {
                continue;
            }
            // canonical representative of {v, iv, -v, -iv}
            let phases = [
                v,
                rotate(&v),
                rotate(&rotate(&v)),
                rotate(&rotate(&rotate(&v))),
            ];
            let canon = *phases.iter().min().unwrap();
            if !seen.insert(canon) {
                continue;
            }
            dirs.push(make_dir(n, &canon));
        }
        Ok(StencilSet { n, radius, dirs })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

fn rotate(v: &[(i32, i32); 3]) -> [(i32, i32); 3] {
    // multiply every component by i: (a + ib) -> (-b + ia)
    let mut out = [(0, 0); 3];
    for (o, &(a, b)) in out.iter_mut().zip(v.iter()) {
        *o = (-b, a);
    }
    out
}

fn make_dir(n: usize, v: &[(i32, i32); 3]) -> StencilDir {
    let mut step_v = [0i32; MAX_AXES];
    let mut step_iv = [0i32; MAX_AXES];
    let mut vc = [C64::new(0.0, 0.0); 3];
    let mut norm2 = 0.0;
    for j in 0..n {
        let (a, b) = v[j];
        step_v[2 * j] = a;
        step_v[2 * j + 1] = b;
        step_iv[2 * j] = -b;
        step_iv[2 * j + 1] = a;
        vc[j] = C64::new(a as f64, b as f64);
        norm2 += (a * a + b * b) as f64;
    }
    let mut quad = quad_form_coeffs(n, &vc);
    for q in quad.iter_mut() {
        *q /= norm2;
    }
    StencilDir {
        v: *v,
        step_v,
        step_iv,
        quad,
        inv_norm2: 1.0 / norm2,
    }
}

/// Parameters of the envelope iteration.
#[derive(Debug, Clone)]
pub struct EnvelopeParams {
    /// tau = tau_factor * h^2; order preservation needs tau_factor <= 1.
    pub tau_factor: f64,
    /// tol = tol_factor * (1 + sup |B|) on the sup norm of one update.
    pub tol_factor: f64,
    /// Absolute tolerance override.
    pub tol_abs: Option<f64>,
    /// Iteration cap; None = 200 N^2.
    pub max_iter: Option<usize>,
    /// Contact threshold; None = max(10 h^2, 1e-6).
    pub eta: Option<f64>,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            tau_factor: 0.25,
            tol_factor: 1e-8,
            tol_abs: None,
            max_iter: None,
            eta: None,
        }
    }
}

impl EnvelopeParams {
    fn tol_for(&self, b: &FormField) -> f64 {
        self.tol_abs
            .unwrap_or_else(|| self.tol_factor * (1.0 + b.sup_entry_norm()))
    }

    fn max_iter_for(&self, grid: &Grid) -> usize {
        self.max_iter
            .unwrap_or(200 * grid.points_per_axis() * grid.points_per_axis())
    }
}

/// Envelope output: the potential plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    pub u_eps: ScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub eta: f64,
    pub contact_mask: Vec<bool>,
    pub ma_density: ScalarField,
}

impl EnvelopeResult {
    /// Fraction of clipped Monge-Ampere mass carried by the contact set.
    pub fn contact_mass_fraction(&self) -> f64 {
        let total = reduce::par_sum(self.ma_density.values());
        if total <= 0.0 {
            return 1.0;
        }
        let on = reduce::par_sum_fn(self.ma_density.values().len(), |i| {
            if self.contact_mask[i] {
                self.ma_density.values()[i]
            } else {
                0.0
            }
        });
        on / total
    }

    /// Number of contact points.
    pub fn contact_count(&self) -> usize {
        self.contact_mask.iter().filter(|m| **m).count()
    }
}

enum BView<'a> {
    Constant(Vec<f64>),
    Varying(&'a [f64], usize),
}

fn b_view<'a>(b: &'a FormField, dirs: &[StencilDir]) -> BView<'a> {
    match b.comps() {
        Comps::Constant(a) => {
            let n = b.dim();
            let stride = FormField::stride(n);
            let mut row = [0.0f64; 9];
            a.pack(&mut row[..stride]);
            // per-direction constant quadratic forms
            let vals = dirs
                .iter()
                .map(|d| d.quad[..stride].iter().zip(&row[..stride]).map(|(q, r)| q * r).sum())
                .collect();
            BView::Constant(vals)
        }
        Comps::Varying(data) => BView::Varying(data, FormField::stride(b.dim())),
    }
}

/// One Jacobi sweep of the obstacle Euler map. Writes the updated field into
/// `out` and returns the sup of |update|.
fn sweep(
    grid: &Grid,
    b: &BView<'_>,
    dirs: &[StencilDir],
    u: &[f64],
    obstacle: Option<&[f64]>,
    tau: f64,
    out: &mut [f64],
) -> f64 {
    let big_n = grid.points_per_axis();
    let axes = grid.axes();
    let inv4h2 = 0.25 / (grid.spacing() * grid.spacing());
    // wrapped last-axis lookup for shifts in [-2r, 2r]
    let max_shift = dirs
        .iter()
        .flat_map(|d| {
            d.step_v[..axes]
                .iter()
                .chain(d.step_iv[..axes].iter())
                .map(|s| s.unsigned_abs() as usize)
        })
        .max()
        .unwrap_or(1);
    let pad = max_shift;
    let wrap_last: Vec<usize> = (0..(big_n + 2 * pad))
        .map(|i| (i + big_n - pad) % big_n)
        .collect();

    let line_max: Vec<f64> = out
        .par_chunks_mut(big_n)
        .enumerate()
        .map(|(li, chunk)| {
            let base = li * big_n;
            let coords = grid.coords(base);
            // per-direction neighbor line bases (all axes except the last)
            let mut bases: Vec<[usize; 4]> = Vec::with_capacity(dirs.len());
            let mut lshift: Vec<[usize; 4]> = Vec::with_capacity(dirs.len());
            for d in dirs {
                let mut bs = [0usize; 4];
                let mut ls = [0usize; 4];
                // slot layout: 0 = +v, 1 = -v, 2 = +iv, 3 = -iv
                let steps: [(&[i32; MAX_AXES], i32); 4] = [
                    (&d.step_v, 1),
                    (&d.step_v, -1),
                    (&d.step_iv, 1),
                    (&d.step_iv, -1),
                ];
                for (slot, (st, sign)) in steps.iter().enumerate() {
                    let mut idx = 0usize;
                    for axis in 0..axes - 1 {
                        let delta = st[axis] * sign;
                        let c = grid.wrap(coords[axis] as i64 + delta as i64);
                        idx += c * grid.stride(axis);
                    }
                    bs[slot] = idx;
                    ls[slot] = (st[axes - 1] * sign + pad as i32) as usize;
                }
                bases.push(bs);
                lshift.push(ls);
            }
            let mut local_max = 0.0f64;
            for t in 0..big_n {
                let idx = base + t;
                let uc = u[idx];
                let mut lam = f64::INFINITY;
                for (di, d) in dirs.iter().enumerate() {
                    let bq = match b {
                        BView::Constant(vals) => vals[di],
                        BView::Varying(data, stride) => {
                            let row = &data[idx * stride..(idx + 1) * stride];
                            let mut s = 0.0;
                            for (q, r) in d.quad[..*stride].iter().zip(row) {
                                s += q * r;
                            }
                            s
                        }
                    };
                    let bs = &bases[di];
                    let ls = &lshift[di];
                    let up = u[bs[0] + wrap_last[t + ls[0]]];
                    let um = u[bs[1] + wrap_last[t + ls[1]]];
                    let vp = u[bs[2] + wrap_last[t + ls[2]]];
                    let vm = u[bs[3] + wrap_last[t + ls[3]]];
                    let second = up + um + vp + vm - 4.0 * uc;
                    let cand = bq + inv4h2 * d.inv_norm2 * second;
                    if cand < lam {
                        lam = cand;
                    }
                }
                let ob = obstacle.map_or(0.0, |o| o[idx]);
                let new = (uc + tau * lam).min(ob);
                chunk[t] = new;
                local_max = local_max.max((new - uc).abs());
            }
            local_max
        })
        .collect();
    reduce::par_max(&line_max)
}

/// Fixed-point iteration of the obstacle Euler map from a given start.
/// `obstacle` None means the zero obstacle.
pub fn obstacle_iterate(
    b: &FormField,
    stencil: &StencilSet,
    params: &EnvelopeParams,
    obstacle: Option<&ScalarField>,
    start: &ScalarField,
) -> Result<(ScalarField, usize, f64, bool)> {
    let grid = b.grid().clone();
    if stencil.n != grid.dim() {
        return Err(Error::DimensionMismatch("stencil vs grid dimension".into()));
    }
    if params.tau_factor <= 0.0 || params.tau_factor > 1.0 {
        return Err(Error::InvalidArgument(
            "tau_factor must lie in (0, 1] for a monotone scheme".into(),
        ));
    }
    let h = grid.spacing();
    let tau = params.tau_factor * h * h;
    let tol = params.tol_for(b);
    let max_iter = params.max_iter_for(&grid);
    let view = b_view(b, &stencil.dirs);
    let obst = obstacle.map(|o| o.values());

    let mut u = start.values().to_vec();
    let mut next = vec![0.0f64; u.len()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    while iterations < max_iter {
        residual = sweep(&grid, &view, &stencil.dirs, &u, obst, tau, &mut next);
        std::mem::swap(&mut u, &mut next);
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    let converged = residual < tol;
    Ok((
        ScalarField::from_values(grid, u)?,
        iterations,
        residual,
        converged,
    ))
}

/// Compute the envelope of the zero obstacle for the given form, starting
/// from u = 0 (which starts above the envelope).
pub fn envelope(
    beta_eps: &FormField,
    stencil: &StencilSet,
    params: &EnvelopeParams,
) -> Result<EnvelopeResult> {
    let zero = ScalarField::zeros(beta_eps.grid().clone());
    envelope_from(beta_eps, stencil, params, &zero)
}

/// Envelope iteration from an arbitrary start (used for warm starts across
/// an epsilon schedule and for coarse-to-fine cascades). The fixed point is
/// independent of the start; convergence is checked by the residual.
pub fn envelope_from(
    beta_eps: &FormField,
    stencil: &StencilSet,
    params: &EnvelopeParams,
    start: &ScalarField,
) -> Result<EnvelopeResult> {
    let clipped = start.map(|v| v.min(0.0));
    let (u_eps, iterations, residual, converged) =
        obstacle_iterate(beta_eps, stencil, params, None, &clipped)?;
    let eta = params.eta.unwrap_or_else(|| default_eta(beta_eps.grid()));
    let contact_mask: Vec<bool> = u_eps.values().par_iter().map(|&v| v >= -eta).collect();
    let ma_density = ma_measure(beta_eps, &u_eps)?;
    Ok(EnvelopeResult {
        u_eps,
        iterations,
        residual,
        converged,
        eta,
        contact_mask,
        ma_density,
    })
}

/// Coarse-to-fine envelope: solve on a ladder of grids, prolonging each
/// solution as the start of the next level. `build` realizes the form on a
/// given grid.
pub fn envelope_multilevel(
    build: &dyn Fn(&Arc<Grid>) -> Result<FormField>,
    final_grid: &Arc<Grid>,
    coarse_start: usize,
    stencil: &StencilSet,
    params: &EnvelopeParams,
) -> Result<EnvelopeResult> {
    let n = final_grid.dim();
    let big_n = final_grid.points_per_axis();
    let mut ladder = Vec::new();
    let mut m = coarse_start.max(8);
    while m < big_n {
        ladder.push(m);
        m *= 2;
    }
    let mut start = ScalarField::zeros(Grid::new(n, *ladder.first().unwrap_or(&big_n))?);
    for level_n in ladder {
        let grid = Grid::new(n, level_n)?;
        let b = build(&grid)?;
        let result = envelope_from(&b, stencil, params, &start.prolong_to(grid.clone())?)?;
        start = result.u_eps;
    }
    let b = build(final_grid)?;
    envelope_from(&b, stencil, params, &start.prolong_to(final_grid.clone())?)
}

/// The shifted-obstacle reduction: the envelope in PSH(X, chi) of the
/// obstacle `obstacle`, i.e. sup { phi <= obstacle, chi + i ddbar phi >= 0 }.
/// The zero-obstacle envelope of beta_eps = chi + i ddbar g is recovered as
/// psi - g with obstacle = -g (up to O(h^2) from the two Hessian routes).
pub fn envelope_with_obstacle(
    chi: &FormField,
    obstacle: &ScalarField,
    stencil: &StencilSet,
    params: &EnvelopeParams,
) -> Result<(ScalarField, usize, f64, bool)> {
    obstacle_iterate(chi, stencil, params, Some(obstacle), obstacle)
}

/// Monge-Ampere density of beta_eps + i ddbar u with the finite-difference
/// Hessian: 2^n n! times the product of the eigenvalues clipped at zero.
pub fn ma_measure(beta_eps: &FormField, u: &ScalarField) -> Result<ScalarField> {
    if !beta_eps.grid().same_as(u.grid()) {
        return Err(Error::GridMismatch("ma_measure".into()));
    }
    let grid = beta_eps.grid().clone();
    let n = grid.dim();
    let scale = (1u32 << n) as f64 * (1..=n).product::<usize>() as f64;
    let vals = u.values();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let m = beta_eps.at(idx).add(&fd_hessian_at(&grid, vals, idx));
            let e = m.eigenvalues();
            let mut dens = scale;
            for &ev in e.iter().take(n) {
                dens *= ev.max(0.0);
            }
            dens
        })
        .collect();
    ScalarField::from_values(grid, values)
}

/// Residual of a field against the spec's reference Euler map at the
/// canonical step tau = h^2/4: sup |min(0, u + tau lambda_min(u)) - u|.
pub fn fixed_point_defect(
    beta_eps: &FormField,
    stencil: &StencilSet,
    u: &ScalarField,
) -> Result<f64> {
    let grid = beta_eps.grid().clone();
    let h = grid.spacing();
    let tau = 0.25 * h * h;
    let view = b_view(beta_eps, &stencil.dirs);
    let mut out = vec![0.0f64; grid.len()];
    let res = sweep(&grid, &view, &stencil.dirs, u.values(), None, tau, &mut out);
    Ok(res)
}

/// Diagnostics of one step of the exponential-regularization route.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentialStep {
    pub delta: f64,
    pub newton_iters: usize,
    pub residual: f64,
    pub c: f64,
}

/// Envelope approximation by exponential regularization.
#[derive(Debug, Clone)]
pub struct ExponentialEnvelope {
    pub u: ScalarField,
    pub steps: Vec<ExponentialStep>,
}

/// Independent envelope oracle: solve (beta_eps + i ddbar u)^n =
/// e^{u/delta} c dV down a decreasing delta schedule and return the last
/// iterate. Writing beta_eps = base + i ddbar g with positive-definite base
/// (the stored closed split), the substitution psi = u + g turns each step
/// into a Monge-Ampere problem over the base with density c e^{-g/delta}.
pub fn envelope_via_exponential(
    beta_eps: &FormField,
    delta_schedule: &[f64],
    params: &crate::ma::NewtonParams,
) -> Result<ExponentialEnvelope> {
    if delta_schedule.is_empty() || delta_schedule.iter().any(|d| *d <= 0.0) {
        return Err(Error::InvalidArgument(
            "delta schedule must be nonempty and positive".into(),
        ));
    }
    if delta_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "delta schedule must be strictly decreasing".into(),
        ));
    }
    let mut base = beta_eps.split_base().ok_or_else(|| {
        Error::InvalidArgument(
            "exponential route needs the closed split beta_eps = base + i ddbar g".into(),
        )
    })?;
    base.verify_positive_definite()?;
    let g_raw = beta_eps
        .split_potential()
        .expect("split_base implies a potential")
        .clone();
    // centering g keeps e^{-g/delta} within range; the form is unchanged
    let g = g_raw.shift_by(-g_raw.mean());
    let total = crate::calculus::integrate_top(beta_eps)?;
    if total <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "exponential route needs positive class integral, got {total:.3e}"
        )));
    }
    let outcome = crate::ma::continuation_solve(
        delta_schedule,
        &|delta| {
            let rho = g.map(|v| (-v / delta).exp());
            Ok(crate::ma::MaProblem {
                chi: base.clone(),
                lambda: 1.0 / delta,
                rho,
                mode: crate::ma::MaMode::FixedConstant(total),
            })
        },
        params,
    )?;
    if let Some(failure) = outcome.failure {
        return Err(Error::MaSolveFailed {
            reason: format!(
                "exponential envelope failed at delta = {}: {}",
                failure.parameter, failure.error
            ),
            margin: f64::NAN,
            residual: f64::NAN,
        });
    }
    let steps: Vec<ExponentialStep> = outcome
        .solutions
        .iter()
        .map(|(delta, sol)| ExponentialStep {
            delta: *delta,
            newton_iters: sol.newton_iters,
            residual: sol.final_residual,
            c: sol.c,
        })
        .collect();
    let last = &outcome.solutions.last().expect("nonempty schedule").1;
    let u = last.phi.sub(&g)?;
    Ok(ExponentialEnvelope { u, steps })
}

/// Report of the balayage (Perron modification) check on a coordinate ball.
#[derive(Debug, Clone, Serialize)]
pub struct BalayageReport {
    pub interior_points: usize,
    pub iterations: usize,
    pub residual: f64,
    pub sup_psi_minus_u: f64,
    pub inf_psi_minus_u: f64,
    pub dominates: bool,
    pub matches_envelope: bool,
    pub tol_dominate: f64,
    pub tol_match: f64,
}

/// Solve the discrete Dirichlet problem lambda_min(beta_eps + Hess psi) = 0
/// on a ball inside the non-contact set, with psi = u_eps on the boundary,
/// and compare against the envelope.
pub fn balayage_check(
    beta_eps: &FormField,
    result: &EnvelopeResult,
    center: &[usize],
    radius: f64,
    stencil: &StencilSet,
    tol_dominate: f64,
    tol_match: f64,
) -> Result<BalayageReport> {
    let grid = beta_eps.grid().clone();
    if center.len() != grid.axes() {
        return Err(Error::DimensionMismatch("ball center".into()));
    }
    let center_idx = grid.index(center);
    let r2 = radius * radius;
    let interior: Vec<usize> = (0..grid.len())
        .filter(|&idx| grid.torus_dist2(idx, center_idx) <= r2)
        .collect();
    if interior.is_empty() {
        return Err(Error::BallRejected("ball contains no grid points".into()));
    }
    // precondition: the closed ball lies inside {u_eps < -eta}
    for &idx in &interior {
        if result.u_eps.values()[idx] >= -result.eta {
            return Err(Error::BallRejected(format!(
                "ball touches the contact set at point {idx} (u = {:.3e}, eta = {:.3e})",
                result.u_eps.values()[idx],
                result.eta
            )));
        }
    }
    let mut is_interior = vec![false; grid.len()];
    for &idx in &interior {
        is_interior[idx] = true;
    }
    let h = grid.spacing();
    let tau = 0.9 * h * h;
    let inv4h2 = 0.25 / (h * h);
    let mut psi = result.u_eps.values().to_vec();
    let tol = 1e-13 * (1.0 + beta_eps.sup_entry_norm());
    let max_iter = 400 * grid.points_per_axis() * grid.points_per_axis();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    // neighbor tables for the compact interior list
    let neighbors: Vec<Vec<[usize; 4]>> = interior
        .iter()
        .map(|&idx| {
            stencil
                .dirs
                .iter()
                .map(|d| {
                    [
                        grid.neighbor(idx, &d.step_v[..grid.axes()]),
                        grid.neighbor(
                            idx,
                            &d.step_v[..grid.axes()].iter().map(|s| -s).collect::<Vec<_>>(),
                        ),
                        grid.neighbor(idx, &d.step_iv[..grid.axes()]),
                        grid.neighbor(
                            idx,
                            &d.step_iv[..grid.axes()].iter().map(|s| -s).collect::<Vec<_>>(),
                        ),
                    ]
                })
                .collect()
        })
        .collect();
    let stride = FormField::stride(grid.dim());
    let quad_at = |idx: usize, d: &StencilDir| -> f64 {
        match beta_eps.comps() {
            Comps::Constant(a) => {
                let mut row = [0.0f64; 9];
                a.pack(&mut row[..stride]);
                d.quad[..stride].iter().zip(&row[..stride]).map(|(q, r)| q * r).sum()
            }
            Comps::Varying(data) => {
                let row = &data[idx * stride..(idx + 1) * stride];
                d.quad[..stride].iter().zip(row).map(|(q, r)| q * r).sum()
            }
        }
    };
    while iterations < max_iter {
        let updates: Vec<f64> = interior
            .par_iter()
            .enumerate()
            .map(|(li, &idx)| {
                let mut lam = f64::INFINITY;
                for (di, d) in stencil.dirs.iter().enumerate() {
                    let nb = &neighbors[li][di];
                    let second =
                        psi[nb[0]] + psi[nb[1]] + psi[nb[2]] + psi[nb[3]] - 4.0 * psi[idx];
                    let cand = quad_at(idx, d) + inv4h2 * d.inv_norm2 * second;
                    lam = lam.min(cand);
                }
                tau * lam
            })
            .collect();
        residual = reduce::sup_norm(&updates);
        for (li, &idx) in interior.iter().enumerate() {
            psi[idx] += updates[li];
        }
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    let mut sup_diff = f64::NEG_INFINITY;
    let mut inf_diff = f64::INFINITY;
    for &idx in &interior {
        let d = psi[idx] - result.u_eps.values()[idx];
        sup_diff = sup_diff.max(d);
        inf_diff = inf_diff.min(d);
    }
    Ok(BalayageReport {
        interior_points: interior.len(),
        iterations,
        residual,
        sup_psi_minus_u: sup_diff,
        inf_psi_minus_u: inf_diff,
        dominates: inf_diff >= -tol_dominate,
        matches_envelope: sup_diff.abs().max(inf_diff.abs()) <= tol_match,
        tol_dominate,
        tol_match,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrigPoly;
    use crate::form::{make_class_form, ClassSpec};
    use crate::grid::make_grid;
    use crate::herm::HMat;
    use std::f64::consts::PI;

    fn one_plus_two_cos_class(grid: &Arc<Grid>) -> FormField {
        let f = TrigPoly::cosine(2, &[1, 0], -2.0 / (PI * PI));
        make_class_form(grid, &ClassSpec::new(HMat::identity(1), f)).unwrap()
    }

    #[test]
    fn stencil_counts_and_closure() {
        let s = StencilSet::new(1, 1).unwrap();
        assert_eq!(s.len(), 1);
        let s = StencilSet::new(2, 1).unwrap();
        assert_eq!(s.len(), 6);
        let s = StencilSet::new(3, 1).unwrap();
        assert_eq!(s.len(), 31);
        // contains the coordinate directions
        for j in 0..3 {
            assert!(s.dirs.iter().any(|d| {
                (0..3).all(|t| {
                    if t == j {
                        d.v[t] == (1, 0) || d.v[t] == (-1, 0) || d.v[t] == (0, 1) || d.v[t] == (0, -1)
                    } else {
                        d.v[t] == (0, 0)
                    }
                })
            }));
        }
        // closed under componentwise conjugation up to phase
        let s2 = StencilSet::new(2, 2).unwrap();
        for d in &s2.dirs {
            let conj: [(i32, i32); 3] = [
                (d.v[0].0, -d.v[0].1),
                (d.v[1].0, -d.v[1].1),
                (d.v[2].0, -d.v[2].1),
            ];
            let phases = [
                conj,
                rotate(&conj),
                rotate(&rotate(&conj)),
                rotate(&rotate(&rotate(&conj))),
            ];
            let canon = *phases.iter().min().unwrap();
            assert!(
                s2.dirs.iter().any(|e| e.v == canon),
                "conjugate of {:?} missing",
                d.v
            );
        }
    }

    #[test]
    fn psd_background_gives_zero_envelope() {
        let grid = make_grid(2, 8).unwrap();
        let b = FormField::constant(grid, HMat::identity(2));
        let stencil = StencilSet::new(2, 1).unwrap();
        let res = envelope(&b, &stencil, &EnvelopeParams::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.u_eps.sup_norm(), 0.0);
        assert!(res.contact_mask.iter().all(|m| *m));
    }

    #[test]
    fn euler_map_is_order_preserving() {
        // random pair u <= w stays ordered after one sweep, for tau <= h^2
        let grid = make_grid(1, 16).unwrap();
        let b = one_plus_two_cos_class(&grid);
        let stencil = StencilSet::new(1, 1).unwrap();
        let view = b_view(&b, &stencil.dirs);
        let h = grid.spacing();
        let mut state = 1234567u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..5 {
            let u: Vec<f64> = (0..grid.len()).map(|_| rnd()).collect();
            let w: Vec<f64> = u.iter().map(|v| v + 0.3 * rnd().abs()).collect();
            let mut un = vec![0.0; u.len()];
            let mut wn = vec![0.0; w.len()];
            sweep(&grid, &view, &stencil.dirs, &u, None, 0.25 * h * h, &mut un);
            sweep(&grid, &view, &stencil.dirs, &w, None, 0.25 * h * h, &mut wn);
            for i in 0..u.len() {
                assert!(un[i] <= wn[i] + 1e-14, "order broken at {i}");
            }
        }
    }

    #[test]
    fn envelope_one_plus_two_cos_basics() {
        let grid = make_grid(1, 64).unwrap();
        let b = one_plus_two_cos_class(&grid)
            .add_scaled(&FormField::constant(grid.clone(), HMat::identity(1)), 0.05)
            .unwrap();
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-11),
            ..EnvelopeParams::default()
        };
        let res = envelope(&b, &stencil, &params).unwrap();
        assert!(res.converged, "residual {}", res.residual);
        // obstacle attained: sup u = 0 (and u <= 0 everywhere)
        assert!(res.u_eps.max() <= 0.0);
        assert!(res.u_eps.max() > -1e-8);
        // nontrivial where the form dips negative
        assert!(res.u_eps.min() < -1e-3);
        // complementarity: MA mass concentrates on the contact set
        assert!(
            res.contact_mass_fraction() >= 0.98,
            "contact mass fraction {}",
            res.contact_mass_fraction()
        );
        // the spec's reference Euler map (tau = h^2/4) is also at its fixed point
        let defect = fixed_point_defect(&b, &stencil, &res.u_eps).unwrap();
        assert!(defect < 1e-9, "fixed point defect {defect}");
    }

    #[test]
    fn envelope_monotone_in_epsilon() {
        let grid = make_grid(1, 32).unwrap();
        let beta = one_plus_two_cos_class(&grid);
        let omega = FormField::constant(grid.clone(), HMat::identity(1));
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-12),
            ..EnvelopeParams::default()
        };
        let small = envelope(&beta.add_scaled(&omega, 0.05).unwrap(), &stencil, &params).unwrap();
        let large = envelope(&beta.add_scaled(&omega, 0.2).unwrap(), &stencil, &params).unwrap();
        for i in 0..grid.len() {
            assert!(
                large.u_eps.values()[i] >= small.u_eps.values()[i] - 1e-9,
                "monotonicity in epsilon broken at {i}"
            );
        }
    }

    #[test]
    fn multilevel_matches_direct() {
        let build = |g: &Arc<Grid>| -> Result<FormField> {
            Ok(one_plus_two_cos_class(g)
                .add_scaled(&FormField::constant(g.clone(), HMat::identity(1)), 0.05)
                .unwrap())
        };
        let grid = make_grid(1, 64).unwrap();
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-12),
            ..EnvelopeParams::default()
        };
        let direct = envelope(&build(&grid).unwrap(), &stencil, &params).unwrap();
        let cascade = envelope_multilevel(&build, &grid, 16, &stencil, &params).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            worst = worst.max((direct.u_eps.values()[i] - cascade.u_eps.values()[i]).abs());
        }
        assert!(worst < 1e-7, "cascade vs direct differ by {worst}");
        assert!(cascade.iterations <= direct.iterations);
    }

    #[test]
    fn shifted_obstacle_reduction_consistent() {
        // chi = A + eps I positive definite, obstacle -g recovers the direct
        // envelope of chi + i ddbar g up to the FD-vs-spectral Hessian gap.
        let grid = make_grid(1, 64).unwrap();
        let g_poly = TrigPoly::cosine(2, &[1, 0], -2.0 / (PI * PI));
        let chi = FormField::constant(grid.clone(), HMat::diag(1, &[1.05]));
        let g = ScalarField::from_modes(grid.clone(), g_poly.clone()).unwrap();
        let beta_eps = chi.add(&crate::form::i_ddbar_spectral(&grid, &g_poly).unwrap()).unwrap();
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-12),
            ..EnvelopeParams::default()
        };
        let direct = envelope(&beta_eps, &stencil, &params).unwrap();
        // beta_eps + i ddbar phi >= 0 iff chi + i ddbar (g + phi) >= 0, and
        // phi <= 0 iff psi = g + phi <= g; so u_eps = psi - g.
        let (psi, _, _, conv) = envelope_with_obstacle(&chi, &g, &stencil, &params).unwrap();
        assert!(conv);
        let h = grid.spacing();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            let u_shifted = psi.values()[i] - g.values()[i];
            worst = worst.max((u_shifted - direct.u_eps.values()[i]).abs());
        }
        assert!(
            worst <= 20.0 * h * h,
            "shifted reduction differs by {worst} (h^2 = {})",
            h * h
        );
    }

    #[test]
    fn exponential_route_constant_background() {
        // constant beta_eps: symmetry forces a spatially constant iterate
        let grid = make_grid(1, 16).unwrap();
        let b = FormField::constant(grid, HMat::diag(1, &[2.0]));
        let out =
            envelope_via_exponential(&b, &[0.2, 0.1], &crate::ma::NewtonParams::default()).unwrap();
        let spread = out.u.max() - out.u.min();
        assert!(spread < 1e-9, "constant background has constant u, spread {spread}");
        // PSD background: u_delta -> 0 uniformly as delta decreases
        assert!(out.u.sup_norm() < 0.05);
        let grid = make_grid(1, 16).unwrap();
        let b = FormField::constant(grid, HMat::diag(1, &[2.0]));
        let finer =
            envelope_via_exponential(&b, &[0.2, 0.1, 0.05, 0.02], &crate::ma::NewtonParams::default())
                .unwrap();
        assert!(finer.u.sup_norm() < out.u.sup_norm() + 1e-12);
    }

    #[test]
    fn exponential_route_approaches_obstacle_envelope() {
        let grid = make_grid(1, 64).unwrap();
        let h = grid.spacing();
        let beta_eps = one_plus_two_cos_class(&grid)
            .add_scaled(&FormField::constant(grid.clone(), HMat::identity(1)), 0.05)
            .unwrap();
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-12),
            ..EnvelopeParams::default()
        };
        let reference = envelope(&beta_eps, &stencil, &params).unwrap();
        let schedule = [0.2, 0.1, 0.05, 0.02];
        let mut prev_diff = f64::INFINITY;
        for take in [2usize, 3, 4] {
            let out = envelope_via_exponential(
                &beta_eps,
                &schedule[..take],
                &crate::ma::NewtonParams::default(),
            )
            .unwrap();
            let diff = out.u.sub(&reference.u_eps).unwrap().sup_norm();
            assert!(diff < prev_diff + 1e-12, "approach is monotone: {diff} vs {prev_diff}");
            prev_diff = diff;
        }
        // the regularization error scales like delta * log(density contrast);
        // at delta = 0.02 on this shallow envelope that is ~0.02
        let norm = reference.u_eps.sup_norm();
        assert!(
            prev_diff <= 1.2 * 0.02 + 10.0 * h * h,
            "delta = 0.02 difference {prev_diff} too large (|u| = {norm})"
        );
    }

    #[test]
    fn ma_measure_cases() {
        let grid = make_grid(2, 8).unwrap();
        let b = FormField::constant(grid.clone(), HMat::diag(2, &[2.0, 3.0]));
        let zero = ScalarField::zeros(grid.clone());
        let dens = ma_measure(&b, &zero).unwrap();
        // 2^2 2! det = 8 * 6 = 48
        assert!((dens.values()[17] - 48.0).abs() < 1e-12);
        let neg = FormField::constant(grid.clone(), HMat::diag(2, &[-1.0, -2.0]));
        let dens = ma_measure(&neg, &zero).unwrap();
        assert_eq!(dens.values()[3], 0.0);
    }

    #[test]
    fn balayage_on_noncontact_ball() {
        let grid = make_grid(1, 64).unwrap();
        let b = one_plus_two_cos_class(&grid)
            .add_scaled(&FormField::constant(grid.clone(), HMat::identity(1)), 0.05)
            .unwrap();
        let stencil = StencilSet::new(1, 1).unwrap();
        let params = EnvelopeParams {
            tau_factor: 0.9,
            tol_abs: Some(1e-13),
            ..EnvelopeParams::default()
        };
        let res = envelope(&b, &stencil, &params).unwrap();
        // the density 1 + 2cos + eps is most negative at x = 1/2
        let center = [32usize, 0];
        let report = balayage_check(&b, &res, &center, 0.08, &stencil, 1e-9, 1e-6).unwrap();
        assert!(report.interior_points > 10);
        assert!(
            report.dominates,
            "psi must dominate the envelope: inf diff {}",
            report.inf_psi_minus_u
        );
        assert!(
            report.matches_envelope,
            "Perron modification predicts equality; sup diff {}",
            report.sup_psi_minus_u
        );
        // PSD case: no non-contact set, ball rejected
        let psd = FormField::constant(grid.clone(), HMat::identity(1));
        let res_psd = envelope(&psd, &stencil, &params).unwrap();
        assert!(matches!(
            balayage_check(&psd, &res_psd, &center, 0.08, &stencil, 1e-9, 1e-6),
            Err(Error::BallRejected(_))
        ));
    }
}
