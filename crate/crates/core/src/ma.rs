//! Newton/continuation solver for complex Monge-Ampere equations
//!
//!     (chi + i del delbar phi)^n = C e^{lambda phi} rho dV
//!
//! on the torus, in log-determinant form: the residual is
//!
//!     r = log det(chi + H phi) - log C - lambda phi - log rho + log(2^n n!),
//!
//! with H the finite-difference complex Hessian. The linearized equation
//! tr(M^{-1} H v) - lambda v - dC/C = -r is solved matrix-free by
//! Jacobi-preconditioned BiCGStab; in unknown-constant mode the constant is
//! an extra scalar unknown closed by the mean-zero normalization of phi.

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::fd_hessian_at;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::form::FormField;
use crate::grid::Grid;
use crate::herm::HMat;
use crate::reduce;

/// Constant-handling mode of the equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaMode {
    /// C is given.
    FixedConstant(f64),
    /// C is an unknown closed by mean(phi) = 0; requires lambda = 0.
    UnknownConstant,
}

/// Problem data. `chi` must be positive definite; `rho` strictly positive.
#[derive(Debug, Clone)]
pub struct MaProblem {
    pub chi: FormField,
    pub lambda: f64,
    pub rho: ScalarField,
    pub mode: MaMode,
}

impl MaProblem {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if matches!(self.mode, MaMode::UnknownConstant) && self.lambda != 0.0 {
            return Err(Error::InvalidArgument(
                "unknown-constant mode requires lambda = 0".into(),
            ));
        }
        if !self.chi.grid().same_as(self.rho.grid()) {
            return Err(Error::GridMismatch("chi vs rho".into()));
        }
        let rho_min = self.rho.min();
        if rho_min <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rho must be positive everywhere (min {rho_min:.3e})"
            )));
        }
        Ok(())
    }
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct MaSolution {
    pub phi: ScalarField,
    pub c: f64,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub positivity_margin: f64,
    /// (iteration, sup residual) history for convergence CSV output.
    pub history: Vec<(usize, f64)>,
}

/// Newton iteration controls.
#[derive(Debug, Clone)]
pub struct NewtonParams {
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub linear_max_iter: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            tol: 1e-10,
            max_newton: 60,
            max_halvings: 30,
            linear_max_iter: 800,
        }
    }
}

fn log_factorial_term(n: usize) -> f64 {
    // log(2^n n!)
    let fact: usize = (1..=n).product();
    ((1usize << n) * fact) as f64
}

struct Evaluation {
    residual: Vec<f64>,
    sup: f64,
    margin: f64,
}

/// Evaluate residual and positivity margin; margin <= 0 means the candidate
/// left the positive cone and the residual is meaningless.
fn evaluate(
    chi: &FormField,
    grid: &Grid,
    phi: &[f64],
    c_log: f64,
    lambda: f64,
    log_rho: &[f64],
    log_norm: f64,
) -> Evaluation {
    let len = grid.len();
    let n = grid.dim();
    let per_point: Vec<(f64, f64)> = (0..len)
        .into_par_iter()
        .map(|idx| {
            let m = chi.at(idx).add(&fd_hessian_at(grid, phi, idx));
            let e = m.eigenvalues();
            let mut det = 1.0;
            let mut mine = f64::INFINITY;
            for &ev in e.iter().take(n) {
                det *= ev;
                mine = mine.min(ev);
            }
            if mine <= 0.0 {
                (f64::NAN, mine)
            } else {
                let r = det.ln() - c_log - lambda * phi[idx] - log_rho[idx] + log_norm;
                (r, mine)
            }
        })
        .collect();
    let margin = per_point
        .par_iter()
        .map(|x| x.1)
        .reduce(|| f64::INFINITY, f64::min);
    if margin <= 0.0 {
        return Evaluation {
            residual: Vec::new(),
            sup: f64::INFINITY,
            margin,
        };
    }
    let residual: Vec<f64> = per_point.iter().map(|x| x.0).collect();
    let sup = reduce::sup_norm(&residual);
    Evaluation {
        residual,
        sup,
        margin,
    }
}

/// tr(A B) for packed Hermitian A and HMat B.
#[inline]
fn tr_product(n: usize, a_packed: &[f64], b: &HMat) -> f64 {
    let mut brow = [0.0f64; 9];
    b.pack(&mut brow[..n * n]);
    let mut s = 0.0;
    for j in 0..n {
        s += a_packed[j] * brow[j];
    }
    for p in (n..n * n).step_by(2) {
        s += 2.0 * (a_packed[p] * brow[p] + a_packed[p + 1] * brow[p + 1]);
    }
    s
}

struct LinearOperator<'a> {
    grid: &'a Grid,
    minv: Vec<f64>,
    diag: Vec<f64>,
    lambda: f64,
    project: bool,
}

impl<'a> LinearOperator<'a> {
    fn new(grid: &'a Grid, chi: &FormField, phi: &[f64], lambda: f64, project: bool) -> Result<Self> {
        let n = grid.dim();
        let stride = FormField::stride(n);
        let len = grid.len();
        let mut minv = vec![0.0f64; len * stride];
        let inv_ok: Vec<bool> = minv
            .par_chunks_mut(stride)
            .enumerate()
            .map(|(idx, row)| {
                let m = chi.at(idx).add(&fd_hessian_at(grid, phi, idx));
                match m.inverse() {
                    Some(inv) => {
                        inv.pack(row);
                        true
                    }
                    None => false,
                }
            })
            .collect();
        if inv_ok.iter().any(|ok| !ok) {
            return Err(Error::MaSolveFailed {
                reason: "singular linearization".into(),
                margin: 0.0,
                residual: f64::NAN,
            });
        }
        let h2 = grid.spacing() * grid.spacing();
        let diag: Vec<f64> = minv
            .par_chunks(stride)
            .map(|row| {
                let tr: f64 = row[..n].iter().sum();
                -tr / h2 - lambda
            })
            .collect();
        Ok(LinearOperator {
            grid,
            minv,
            diag,
            lambda,
            project,
        })
    }

    /// A v = tr(M^{-1} H v) - lambda v, optionally mean-projected.
    fn apply_raw(&self, v: &[f64], out: &mut [f64]) {
        let n = self.grid.dim();
        let stride = FormField::stride(n);
        out.par_iter_mut().enumerate().for_each(|(idx, o)| {
            let hv = fd_hessian_at(self.grid, v, idx);
            let row = &self.minv[idx * stride..(idx + 1) * stride];
            *o = tr_product(n, row, &hv) - self.lambda * v[idx];
        });
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        if self.project {
            let vm = reduce::mean(v);
            let centered: Vec<f64> = v.par_iter().map(|x| x - vm).collect();
            self.apply_raw(&centered, out);
            let om = reduce::mean(out);
            out.par_iter_mut().for_each(|x| *x -= om);
        } else {
            self.apply_raw(v, out);
        }
    }

    fn precondition(&self, r: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = r[i] / self.diag[i]);
        if self.project {
            let m = reduce::mean(out);
            out.par_iter_mut().for_each(|x| *x -= m);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    reduce::par_sum_fn(a.len(), |i| a[i] * b[i])
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.par_iter_mut().enumerate().for_each(|(i, v)| *v += alpha * x[i]);
}

/// Left-preconditioned BiCGStab for the (projected) linearized system.
fn bicgstab(op: &LinearOperator<'_>, rhs: &[f64], tol_rel: f64, max_iter: usize) -> Result<Vec<f64>> {
    let len = rhs.len();
    let mut prhs = vec![0.0; len];
    op.precondition(rhs, &mut prhs);
    let rhs_norm = dot(&prhs, &prhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let mut x = vec![0.0f64; len];
    let mut r = prhs.clone();
    let r0 = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0f64; len];
    let mut p = vec![0.0f64; len];
    let mut tmp = vec![0.0f64; len];
    let mut pv = vec![0.0f64; len];
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(Error::MaSolveFailed {
                reason: "linear solver breakdown (rho)".into(),
                margin: f64::NAN,
                residual: f64::NAN,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        // p = r + beta (p - omega v)
        p.par_iter_mut().enumerate().for_each(|(i, pi)| {
            *pi = r[i] + beta * (*pi - omega * v[i]);
        });
        op.apply(&p, &mut tmp);
        op.precondition(&tmp.clone(), &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            return Err(Error::MaSolveFailed {
                reason: "linear solver breakdown (r0.v)".into(),
                margin: f64::NAN,
                residual: f64::NAN,
            });
        }
        alpha = rho / r0v;
        // s = r - alpha v  (reuse r)
        axpy(&mut r, -alpha, &v);
        if dot(&r, &r).sqrt() <= tol_rel * rhs_norm {
            axpy(&mut x, alpha, &p);
            return Ok(x);
        }
        op.apply(&r, &mut tmp);
        op.precondition(&tmp.clone(), &mut pv);
        let tt = dot(&pv, &pv);
        if tt < 1e-300 {
            axpy(&mut x, alpha, &p);
            return Ok(x);
        }
        omega = dot(&pv, &r) / tt;
        // x += alpha p + omega s
        x.par_iter_mut().enumerate().for_each(|(i, xi)| {
            *xi += alpha * p[i] + omega * r[i];
        });
        // r = s - omega t
        axpy(&mut r, -omega, &pv);
        if dot(&r, &r).sqrt() <= tol_rel * rhs_norm {
            return Ok(x);
        }
    }
    // An inexact step is still a usable descent direction; the damped
    // Newton acceptance test decides whether it helped.
    Ok(x)
}

/// Solve the Monge-Ampere problem from the zero initial guess.
pub fn solve_ma(problem: &MaProblem, params: &NewtonParams) -> Result<MaSolution> {
    let zero = ScalarField::zeros(problem.chi.grid().clone());
    solve_ma_from(problem, params, &zero)
}

/// Solve from a warm start (the start is mean-centered in unknown-constant
/// mode).
pub fn solve_ma_from(
    problem: &MaProblem,
    params: &NewtonParams,
    start: &ScalarField,
) -> Result<MaSolution> {
    problem.validate()?;
    let grid = problem.chi.grid().clone();
    if !start.grid().same_as(&grid) {
        return Err(Error::GridMismatch("warm start grid".into()));
    }
    let n = grid.dim();
    let log_norm = log_factorial_term(n).ln();
    let log_rho: Vec<f64> = problem.rho.values().par_iter().map(|r| r.ln()).collect();

    let unknown_c = matches!(problem.mode, MaMode::UnknownConstant);
    let mut phi: Vec<f64> = start.values().to_vec();
    if unknown_c {
        let m = reduce::mean(&phi);
        phi.par_iter_mut().for_each(|v| *v -= m);
    }
    let mut c_log = match problem.mode {
        MaMode::FixedConstant(c) => {
            if c <= 0.0 {
                return Err(Error::InvalidArgument("C must be positive".into()));
            }
            c.ln()
        }
        MaMode::UnknownConstant => 0.0,
    };

    let mut ev = evaluate(&problem.chi, &grid, &phi, c_log, problem.lambda, &log_rho, log_norm);
    if ev.margin <= 0.0 {
        return Err(Error::MaSolveFailed {
            reason: "initial guess is not strictly psh-compatible".into(),
            margin: ev.margin,
            residual: f64::NAN,
        });
    }
    if unknown_c {
        // zero-mean initial residual fixes the constant's starting value
        c_log += reduce::mean(&ev.residual);
        ev = evaluate(&problem.chi, &grid, &phi, c_log, problem.lambda, &log_rho, log_norm);
    }

    let mut history = Vec::new();
    for iter in 0..params.max_newton {
        history.push((iter, ev.sup));
        if ev.sup < params.tol {
            return Ok(MaSolution {
                phi: ScalarField::from_values(grid, phi)?,
                c: c_log.exp(),
                newton_iters: iter,
                final_residual: ev.sup,
                positivity_margin: ev.margin,
                history,
            });
        }
        let op = LinearOperator::new(&grid, &problem.chi, &phi, problem.lambda, unknown_c)?;
        let rhs: Vec<f64> = ev.residual.par_iter().map(|r| -r).collect();
        let lin_tol = 1e-2_f64.min(1e-2 * ev.sup).max(1e-12);
        let v = bicgstab(&op, &rhs, lin_tol, params.linear_max_iter)?;
        let dc = if unknown_c {
            // recover the constant update from the unprojected equation
            let mut av = vec![0.0; v.len()];
            op.apply_raw(&v, &mut av);
            reduce::par_sum_fn(av.len(), |i| av[i] + ev.residual[i]) / av.len() as f64
        } else {
            0.0
        };

        // Damped acceptance: positivity margin > 0 and residual decrease.
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..=params.max_halvings {
            let cand: Vec<f64> = phi
                .par_iter()
                .enumerate()
                .map(|(i, p)| p + t * v[i])
                .collect();
            let cand = if unknown_c {
                let m = reduce::mean(&cand);
                cand.par_iter().map(|x| x - m).collect()
            } else {
                cand
            };
            let c_cand = c_log + t * dc;
            let ev_cand = evaluate(
                &problem.chi,
                &grid,
                &cand,
                c_cand,
                problem.lambda,
                &log_rho,
                log_norm,
            );
            if ev_cand.margin > 0.0 && ev_cand.sup < ev.sup {
                phi = cand;
                c_log = c_cand;
                ev = ev_cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::MaSolveFailed {
                reason: "damping could not restore positivity and descent".into(),
                margin: ev.margin,
                residual: ev.sup,
            });
        }
    }
    if ev.sup < params.tol {
        let iters = params.max_newton;
        return Ok(MaSolution {
            phi: ScalarField::from_values(grid, phi)?,
            c: c_log.exp(),
            newton_iters: iters,
            final_residual: ev.sup,
            positivity_margin: ev.margin,
            history,
        });
    }
    Err(Error::MaSolveFailed {
        reason: format!("Newton did not reach tolerance {:.1e}", params.tol),
        margin: ev.margin,
        residual: ev.sup,
    })
}

/// Failure record of a continuation run.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuationFailure {
    pub index: usize,
    pub parameter: f64,
    pub error: String,
}

/// Outcome of a continuation run: the solved prefix plus failure metadata.
pub struct ContinuationOutcome {
    pub solutions: Vec<(f64, MaSolution)>,
    pub failure: Option<ContinuationFailure>,
}

/// Solve a family of problems along a strictly monotone schedule, warm
/// starting each solve from the previous solution.
pub fn continuation_solve(
    schedule: &[f64],
    make_problem: &dyn Fn(f64) -> Result<MaProblem>,
    params: &NewtonParams,
) -> Result<ContinuationOutcome> {
    if schedule.len() > 1 {
        let increasing = schedule.windows(2).all(|w| w[1] > w[0]);
        let decreasing = schedule.windows(2).all(|w| w[1] < w[0]);
        if !increasing && !decreasing {
            return Err(Error::InvalidArgument(
                "continuation schedule must be strictly monotone".into(),
            ));
        }
    }
    let mut solutions: Vec<(f64, MaSolution)> = Vec::new();
    let mut warm: Option<ScalarField> = None;
    for (index, &s) in schedule.iter().enumerate() {
        let step = (|| -> Result<MaSolution> {
            let problem = make_problem(s)?;
            match &warm {
                Some(w) => solve_ma_from(&problem, params, w),
                None => solve_ma(&problem, params),
            }
        })();
        match step {
            Ok(sol) => {
                warm = Some(sol.phi.clone());
                solutions.push((s, sol));
            }
            Err(e) => {
                return Ok(ContinuationOutcome {
                    solutions,
                    failure: Some(ContinuationFailure {
                        index,
                        parameter: s,
                        error: e.to_string(),
                    }),
                });
            }
        }
    }
    Ok(ContinuationOutcome {
        solutions,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{i_ddbar, integrate_top, DiffMode};
    use crate::field::TrigPoly;
    use crate::form::{make_class_form, ClassSpec};
    use crate::grid::make_grid;
    use crate::herm::HMat;
    use std::f64::consts::PI;

    #[test]
    fn flat_unknown_constant() {
        for n in [1usize, 2] {
            let grid = make_grid(n, 8).unwrap();
            let chi = FormField::constant(grid.clone(), HMat::identity(n));
            let rho = ScalarField::zeros(grid.clone()).shift_by(1.0);
            let problem = MaProblem {
                chi,
                lambda: 0.0,
                rho,
                mode: MaMode::UnknownConstant,
            };
            let sol = solve_ma(&problem, &NewtonParams::default()).unwrap();
            let expect = ((1usize << n) * (1..=n).product::<usize>()) as f64;
            assert!(sol.phi.sup_norm() < 1e-12);
            assert!((sol.c - expect).abs() < 1e-10, "C = {}, want {expect}", sol.c);
        }
    }

    #[test]
    fn manufactured_solution_recovery() {
        // phi* = 0.1 cos(2 pi x1), chi = I, lambda = 1, C = 1:
        // rho = 2^n n! det(I + H phi*) e^{-phi*}
        let grid = make_grid(1, 64).unwrap();
        let phi_star_poly = TrigPoly::cosine(2, &[1, 0], 0.1);
        let phi_star = ScalarField::from_modes(grid.clone(), phi_star_poly.clone()).unwrap();
        let hess = i_ddbar(&phi_star, DiffMode::Spectral).unwrap();
        let chi = FormField::constant(grid.clone(), HMat::identity(1));
        let m = chi.add(&hess).unwrap();
        let rho_vals: Vec<f64> = (0..grid.len())
            .map(|i| 2.0 * m.at(i).det() * (-phi_star.values()[i]).exp())
            .collect();
        let rho = ScalarField::from_values(grid.clone(), rho_vals).unwrap();
        let problem = MaProblem {
            chi,
            lambda: 1.0,
            rho,
            mode: MaMode::FixedConstant(1.0),
        };
        let sol = solve_ma(&problem, &NewtonParams::default()).unwrap();
        let h = grid.spacing();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            worst = worst.max((sol.phi.values()[i] - phi_star.values()[i]).abs());
        }
        assert!(
            worst < 5.0 * h * h,
            "manufactured recovery error {worst} (h^2 = {})",
            h * h
        );
        assert!(sol.positivity_margin > 0.0);
    }

    #[test]
    fn scaling_property_unknown_constant() {
        // replacing rho by s rho divides C by s and leaves phi unchanged
        let grid = make_grid(2, 8).unwrap();
        let f = TrigPoly::cosine(4, &[1, 0, 0, 0], 0.05);
        let chi = make_class_form(&grid, &ClassSpec::new(HMat::identity(2), f)).unwrap();
        let rho_poly = TrigPoly::constant(4, 1.0).add(&TrigPoly::cosine(4, &[0, 1, 0, 0], 0.2));
        let rho = ScalarField::from_modes(grid.clone(), rho_poly).unwrap();
        let p1 = MaProblem {
            chi: chi.clone(),
            lambda: 0.0,
            rho: rho.clone(),
            mode: MaMode::UnknownConstant,
        };
        let p2 = MaProblem {
            chi,
            lambda: 0.0,
            rho: rho.scale(3.0),
            mode: MaMode::UnknownConstant,
        };
        let s1 = solve_ma(&p1, &NewtonParams::default()).unwrap();
        let s2 = solve_ma(&p2, &NewtonParams::default()).unwrap();
        assert!((s1.c / s2.c - 3.0).abs() < 1e-9, "C ratio {}", s1.c / s2.c);
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            worst = worst.max((s1.phi.values()[i] - s2.phi.values()[i]).abs());
        }
        assert!(worst < 1e-9, "phi changed by {worst}");
    }

    #[test]
    fn closed_background_mass_identity() {
        // lambda = 0, closed chi: C int rho = int chi^n (exactly at n=1)
        let grid = make_grid(1, 32).unwrap();
        let f = TrigPoly::cosine(2, &[1, 0], 0.02);
        let chi = make_class_form(&grid, &ClassSpec::new(HMat::diag(1, &[1.5]), f)).unwrap();
        let rho_poly = TrigPoly::constant(2, 1.0).add(&TrigPoly::cosine(2, &[0, 1], 0.3));
        let rho = ScalarField::from_modes(grid.clone(), rho_poly).unwrap();
        let problem = MaProblem {
            chi: chi.clone(),
            lambda: 0.0,
            rho: rho.clone(),
            mode: MaMode::UnknownConstant,
        };
        let sol = solve_ma(&problem, &NewtonParams::default()).unwrap();
        let lhs = sol.c * rho.mean();
        let rhs = integrate_top(&chi).unwrap();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn continuation_family_and_infeasible_step() {
        let grid = make_grid(1, 16).unwrap();
        let rho = ScalarField::zeros(grid.clone()).shift_by(1.0);
        // chi = (A + eps) I stays positive for eps > -1; the last step is
        // deliberately infeasible.
        let make = |eps: f64| -> Result<MaProblem> {
            Ok(MaProblem {
                chi: FormField::constant(grid.clone(), HMat::diag(1, &[1.0 + eps])),
                lambda: 0.0,
                rho: rho.clone(),
                mode: MaMode::UnknownConstant,
            })
        };
        let out = continuation_solve(&[0.5, 0.2, 0.1], &make, &NewtonParams::default()).unwrap();
        assert_eq!(out.solutions.len(), 3);
        assert!(out.failure.is_none());
        for (eps, sol) in &out.solutions {
            // constant-coefficient case: C = int (A + eps I)^n exactly
            let expect = 2.0 * (1.0 + eps);
            assert!((sol.c - expect).abs() < 1e-9);
        }
        let out = continuation_solve(&[0.5, -2.0], &make, &NewtonParams::default()).unwrap();
        assert_eq!(out.solutions.len(), 1);
        let failure = out.failure.unwrap();
        assert_eq!(failure.index, 1);
        // non-monotone schedule rejected
        assert!(continuation_solve(&[0.5, 0.7, 0.2], &make, &NewtonParams::default()).is_err());
    }

    #[test]
    fn monotone_residual_decrease() {
        let grid = make_grid(1, 32).unwrap();
        let f = TrigPoly::cosine(2, &[1, 0], 0.05);
        let chi = make_class_form(&grid, &ClassSpec::new(HMat::identity(1), f)).unwrap();
        let rho_poly = TrigPoly::constant(2, 1.0).add(&TrigPoly::cosine(2, &[1, 1], 0.4));
        let rho = ScalarField::from_modes(grid.clone(), rho_poly).unwrap();
        let problem = MaProblem {
            chi,
            lambda: 0.5,
            rho,
            mode: MaMode::FixedConstant(2.0),
        };
        let sol = solve_ma(&problem, &NewtonParams::default()).unwrap();
        for w in sol.history.windows(2) {
            assert!(w[1].1 < w[0].1, "residual went up: {:?}", sol.history);
        }
    }
}
