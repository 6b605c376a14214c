//! Line-search SQP for small dense nonlinear programs.
//!
//! ```text
//! minimize f(x)  s.t.  c_E(x) = 0,  c_I(x) >= 0,  lb <= x <= ub
//! ```
//!
//! Each iteration builds a Lagrangian Hessian by central differences of the
//! (analytic or finite-difference) gradients, clamps its eigenvalues to keep
//! it positive definite, and solves a QP subproblem. Steps are globalized
//! with an l1 merit function, Armijo backtracking and a second-order
//! correction. An elastic QP takes over when the linearization is
//! inconsistent.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::kkt::{nlp_kkt_residuals, KktResiduals, NlpMultipliers};
use super::qp::{solve_qp, QpProblem};
use super::{SolveReport, SolveStatus};
use crate::error::{Error, Result};

/// Step for finite-difference first derivatives.
pub const FD_STEP: f64 = 1e-7;
/// Step for differencing gradients into a Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-5;

const INITIAL_RADIUS: f64 = 1.0;
const MIN_RADIUS: f64 = 1e-12;
const MAX_RADIUS: f64 = 1e3;
const MAX_RADIUS_CUTS: usize = 40;
const MAX_PENALTY: f64 = 1e8;
// actual over predicted merit reduction needed to take a step
const ACCEPT_RATIO: f64 = 1e-4;

static FD_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_fd(what: &str) {
    if !FD_WARNED.swap(true, Ordering::Relaxed) {
        warn!("NLP {what} evaluated by finite differences (step {FD_STEP:e}); accuracy limited to ~1e-8");
    }
}

fn fd_step(x: f64) -> f64 {
    FD_STEP * x.abs().max(1.0)
}

fn check_finite_vec(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Objective and constraint callbacks.
///
/// Derivatives default to central finite differences with a one-time warning.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;

    fn objective(&self, x: &DVector<f64>) -> Result<f64>;

    fn eq_constraints(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }

    fn ineq_constraints(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        warn_fd("gradient");
        let mut g = DVector::zeros(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = self.objective(&xp)?;
            xp[i] = x[i] - h;
            let fm = self.objective(&xp)?;
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    fn eq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        warn_fd("equality Jacobian");
        fd_jacobian(x, |y| self.eq_constraints(y))
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        warn_fd("inequality Jacobian");
        fd_jacobian(x, |y| self.ineq_constraints(y))
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.num_vars();
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    fn initial_guess(&self) -> DVector<f64>;
}

pub fn fd_jacobian<F>(x: &DVector<f64>, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = f(x)?.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let cp = f(&xp)?;
        xp[i] = x[i] - h;
        let cm = f(&xp)?;
        xp[i] = x[i];
        jac.set_column(i, &((cp - cm) / (2.0 * h)));
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy)]
pub struct NlpOptions {
    /// Tolerance on scaled stationarity, dual sign and complementarity.
    pub tol: f64,
    /// Tolerance on constraint violation.
    pub constraint_tol: f64,
    pub max_iter: usize,
    /// Relative eigenvalue floor for the Hessian model.
    pub hessian_floor: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            tol: super::DEFAULT_NLP_TOL,
            constraint_tol: super::DEFAULT_NLP_TOL,
            max_iter: 200,
            hessian_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: DVector<f64>,
    pub multipliers: NlpMultipliers,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub report: SolveReport,
}

struct Eval {
    f: f64,
    g: DVector<f64>,
    ce: DVector<f64>,
    ci: DVector<f64>,
    je: DMatrix<f64>,
    ji: DMatrix<f64>,
}

fn evaluate<P: NlpProblem + ?Sized>(p: &P, x: &DVector<f64>) -> Result<Eval> {
    let f = p.objective(x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("NLP objective"));
    }
    let g = p.gradient(x)?;
    check_finite_vec(&g, "NLP gradient")?;
    let ce = p.eq_constraints(x)?;
    check_finite_vec(&ce, "NLP equality constraints")?;
    let ci = p.ineq_constraints(x)?;
    check_finite_vec(&ci, "NLP inequality constraints")?;
    let je = p.eq_jacobian(x)?;
    let ji = p.ineq_jacobian(x)?;
    if !je.iter().chain(ji.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("NLP constraint Jacobian"));
    }
    Ok(Eval {
        f,
        g,
        ce,
        ci,
        je,
        ji,
    })
}

fn violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter().map(|v| v.abs()).sum::<f64>() + ci.iter().map(|v| (-v).max(0.0)).sum::<f64>()
}

fn max_violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.amax().max(ci.iter().fold(0.0f64, |a, v| a.max(-v)))
}

fn merit<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    rho: f64,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let f = p.objective(x)?;
    let ce = p.eq_constraints(x)?;
    let ci = p.ineq_constraints(x)?;
    let phi = f + rho * violation(&ce, &ci);
    if !phi.is_finite() {
        return Err(Error::NonFinite("NLP merit"));
    }
    Ok((phi, ce, ci))
}

fn lagrangian_gradient<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    y: &NlpMultipliers,
) -> Result<DVector<f64>> {
    let mut g = p.gradient(x)?;
    if y.eq.len() > 0 {
        g -= p.eq_jacobian(x)?.transpose() * &y.eq;
    }
    if y.ineq.len() > 0 {
        g -= p.ineq_jacobian(x)?.transpose() * &y.ineq;
    }
    Ok(g)
}

/// Finite-difference Lagrangian Hessian, symmetrized.
fn lagrangian_hessian<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    y: &NlpMultipliers,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let step = HESSIAN_FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let gp = lagrangian_gradient(p, &xp, y)?;
        xp[j] = x[j] - step;
        let gm = lagrangian_gradient(p, &xp, y)?;
        xp[j] = x[j];
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    let h = (&h + h.transpose()) * 0.5;
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("NLP Hessian"));
    }
    Ok(h)
}

/// Positive-definite model: `h + c AᵀA` with eigenvalues clamped.
fn convexify(h: &DMatrix<f64>, active: &DMatrix<f64>, c: f64, floor: f64) -> DMatrix<f64> {
    let top = h.amax().max(1.0);
    let aug = h + active.transpose() * active * c;
    let eig = SymmetricEigen::new(aug);
    let clamped = eig.eigenvalues.map(|l| l.abs().max(floor * top));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Constraint rows expected to stay active, as linearized rows `A d + r = 0`.
///
/// Adding `c/2 |A d + r|²` to the QP objective leaves its solution and
/// multipliers unchanged as long as every row in `A` ends up active, while
/// it lets curvature across those rows absorb indefiniteness that eigenvalue
/// clamping would otherwise spread into the reduced Hessian.
struct ActiveRows {
    matrix: DMatrix<f64>,
    resid: DVector<f64>,
    ineq: Vec<usize>,
    bounds: Vec<(usize, bool)>,
}

impl ActiveRows {
    fn new(
        e: &Eval,
        x: &DVector<f64>,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
        ineq: Vec<usize>,
        bounds: Vec<(usize, bool)>,
    ) -> Self {
        let n = e.g.len();
        let rows = e.je.nrows() + ineq.len() + bounds.len();
        let mut matrix = DMatrix::zeros(rows, n);
        let mut resid = DVector::zeros(rows);
        matrix.rows_mut(0, e.je.nrows()).copy_from(&e.je);
        resid.rows_mut(0, e.je.nrows()).copy_from(&e.ce);
        let mut r = e.je.nrows();
        for &i in &ineq {
            matrix.set_row(r, &e.ji.row(i));
            resid[r] = e.ci[i];
            r += 1;
        }
        for &(i, upper) in &bounds {
            matrix[(r, i)] = 1.0;
            resid[r] = x[i] - if upper { ub[i] } else { lb[i] };
            r += 1;
        }
        Self {
            matrix,
            resid,
            ineq,
            bounds,
        }
    }

    fn from_multipliers(
        y: &NlpMultipliers,
        e: &Eval,
        x: &DVector<f64>,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
    ) -> Self {
        let ineq = (0..y.ineq.len()).filter(|&i| y.ineq[i] > 0.0).collect();
        // bound multipliers are positive on the lower side
        let bounds = (0..x.len())
            .filter(|&i| y.bounds[i] != 0.0)
            .map(|i| (i, y.bounds[i] < 0.0))
            .collect();
        Self::new(e, x, lb, ub, ineq, bounds)
    }

    /// Equality rows only.
    fn equalities(e: &Eval, x: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> Self {
        Self::new(e, x, lb, ub, Vec::new(), Vec::new())
    }

    /// Drops rows the step left inactive; returns false if none were dropped.
    fn prune(
        &mut self,
        e: &Eval,
        x: &DVector<f64>,
        lb: &DVector<f64>,
        ub: &DVector<f64>,
        d: &DVector<f64>,
    ) -> bool {
        let me = e.je.nrows();
        let lin = &self.matrix * d + &self.resid;
        let tol =
            |k: usize| 1e-9 * (1.0 + self.resid[k].abs() + (&self.matrix.row(k) * d)[0].abs());
        let ineq: Vec<usize> = self
            .ineq
            .iter()
            .enumerate()
            .filter(|(j, _)| lin[me + j].abs() <= tol(me + j))
            .map(|(_, &i)| i)
            .collect();
        let off = me + self.ineq.len();
        let bounds: Vec<(usize, bool)> = self
            .bounds
            .iter()
            .enumerate()
            .filter(|(j, _)| lin[off + j].abs() <= tol(off + j))
            .map(|(_, &b)| b)
            .collect();
        if ineq.len() == self.ineq.len() && bounds.len() == self.bounds.len() {
            return false;
        }
        *self = Self::new(e, x, lb, ub, ineq, bounds);
        true
    }
}

struct Step {
    d: DVector<f64>,
    y: NlpMultipliers,
    elastic: bool,
    slack: f64,
}

fn subproblem(
    b: &DMatrix<f64>,
    grad: &DVector<f64>,
    e: &Eval,
    ce: &DVector<f64>,
    ci: &DVector<f64>,
    dlo: &DVector<f64>,
    dhi: &DVector<f64>,
    rho: f64,
) -> Result<Step> {
    let n = e.g.len();
    let (me, mi) = (ce.len(), ci.len());
    let qp = QpProblem::new(b.clone(), grad.clone())
        .with_equalities(e.je.clone(), -ce)
        .with_inequalities(e.ji.clone(), -ci, DVector::from_element(mi, f64::INFINITY))
        .with_bounds(dlo.clone(), dhi.clone());
    let sol = solve_qp(&qp, 1e-10)?;
    if sol.report.status != SolveStatus::Infeasible {
        let y = NlpMultipliers {
            eq: sol.multipliers.eq,
            ineq: sol.multipliers.ineq,
            bounds: sol.multipliers.bounds,
        };
        return Ok(Step {
            d: sol.x,
            y,
            elastic: false,
            slack: 0.0,
        });
    }

    // Elastic mode: z = [d, s_eq+, s_eq-, s_in], slacks >= 0 penalized by rho.
    let ns = 2 * me + mi;
    let nz = n + ns;
    let mut h = DMatrix::zeros(nz, nz);
    h.view_mut((0, 0), (n, n)).copy_from(b);
    for k in n..nz {
        h[(k, k)] = 1e-8 * rho.max(1.0);
    }
    let mut f = DVector::from_element(nz, rho);
    f.rows_mut(0, n).copy_from(grad);
    let mut aeq = DMatrix::zeros(me, nz);
    aeq.view_mut((0, 0), (me, n)).copy_from(&e.je);
    for i in 0..me {
        aeq[(i, n + i)] = 1.0;
        aeq[(i, n + me + i)] = -1.0;
    }
    let mut ain = DMatrix::zeros(mi, nz);
    ain.view_mut((0, 0), (mi, n)).copy_from(&e.ji);
    for i in 0..mi {
        ain[(i, n + 2 * me + i)] = 1.0;
    }
    let mut lo = DVector::zeros(nz);
    let mut hi = DVector::from_element(nz, f64::INFINITY);
    lo.rows_mut(0, n).copy_from(dlo);
    hi.rows_mut(0, n).copy_from(dhi);
    let qp = QpProblem::new(h, f)
        .with_equalities(aeq, -ce)
        .with_inequalities(ain, -ci, DVector::from_element(mi, f64::INFINITY))
        .with_bounds(lo, hi);
    let sol = solve_qp(&qp, 1e-10)?;
    if sol.report.status == SolveStatus::Infeasible {
        return Err(Error::Solver("elastic QP subproblem infeasible".into()));
    }
    let slack = sol.x.rows(n, ns).sum();
    let y = NlpMultipliers {
        eq: sol.multipliers.eq,
        ineq: sol.multipliers.ineq,
        bounds: sol.multipliers.bounds.rows(0, n).into_owned(),
    };
    Ok(Step {
        d: sol.x.rows(0, n).into_owned(),
        y,
        elastic: true,
        slack,
    })
}

fn project(x: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lb[i], ub[i]))
}

/// QP step with the Hessian augmented across the rows expected to stay active.
#[allow(clippy::too_many_arguments)]
fn model_step(
    h: &DMatrix<f64>,
    e: &Eval,
    x: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    y: &NlpMultipliers,
    dlo: &DVector<f64>,
    dhi: &DVector<f64>,
    rho: f64,
    floor: f64,
) -> Result<(Step, DMatrix<f64>)> {
    let c = 100.0 * h.amax().max(1.0);
    let rho = rho.max(10.0);
    let mut active = ActiveRows::from_multipliers(y, e, x, lb, ub);
    for _ in 0..4 {
        let b = convexify(h, &active.matrix, c, floor);
        let grad = &e.g + active.matrix.transpose() * &active.resid * c;
        let s = subproblem(&b, &grad, e, &e.ce, &e.ci, dlo, dhi, rho)?;
        if s.elastic {
            break;
        }
        if !active.prune(e, x, lb, ub, &s.d) {
            return Ok((s, b));
        }
    }
    // equality rows alone stay exact whenever the step is not elastic
    let active = ActiveRows::equalities(e, x, lb, ub);
    let b = convexify(h, &active.matrix, c, floor);
    let grad = &e.g + active.matrix.transpose() * &active.resid * c;
    let s = subproblem(&b, &grad, e, &e.ce, &e.ci, dlo, dhi, rho)?;
    if !s.elastic {
        return Ok((s, b));
    }
    let b = convexify(h, &DMatrix::zeros(0, x.len()), 0.0, floor);
    let s = subproblem(&b, &e.g, e, &e.ce, &e.ci, dlo, dhi, rho)?;
    Ok((s, b))
}

/// Solves the NLP from `p.initial_guess()`.
pub fn solve_nlp<P: NlpProblem + ?Sized>(p: &P, opts: &NlpOptions) -> Result<NlpSolution> {
    let start = Instant::now();
    let n = p.num_vars();
    let (lb, ub) = p.bounds();
    let x0 = p.initial_guess();
    if x0.len() != n || lb.len() != n || ub.len() != n {
        return Err(Error::InvalidParameter("NLP dimension mismatch".into()));
    }
    check_finite_vec(&x0, "NLP initial guess")?;
    if opts.max_iter == 0 || !(opts.tol > 0.0) || !(opts.constraint_tol > 0.0) {
        return Err(Error::InvalidParameter(
            "NLP options: max_iter and tolerances must be positive".into(),
        ));
    }
    if let Some(i) = (0..n).find(|&i| lb[i] > ub[i]) {
        let mut report = SolveReport::infeasible(0, start, Some(super::ConstraintRef::Bound(i)));
        report.primal_residual = lb[i] - ub[i];
        let residuals = KktResiduals {
            primal: report.primal_residual,
            ..Default::default()
        };
        let objective = p.objective(&x0)?;
        let multipliers = NlpMultipliers::zeros(n, 0, 0);
        return Ok(NlpSolution {
            objective,
            x: x0,
            multipliers,
            residuals,
            report,
        });
    }

    let mut x = project(&x0, &lb, &ub);
    let mut e = evaluate(p, &x)?;
    let (me, mi) = (e.ce.len(), e.ci.len());
    let mut y = NlpMultipliers::zeros(n, me, mi);

    let mut rho: f64 = 1.0;
    let mut best: Option<(f64, DVector<f64>, NlpMultipliers, KktResiduals)> = None;
    let mut infeasible_hits = 0usize;
    // infinity-norm trust region on the step
    let mut radius = INITIAL_RADIUS;

    for iter in 1..=opts.max_iter {
        let h = lagrangian_hessian(p, &x, &y)?;
        let viol0 = violation(&e.ce, &e.ci);
        let mut accepted = None;
        let mut last = None;
        for _ in 0..MAX_RADIUS_CUTS {
            let dlo = (&lb - &x).map(|v| v.max(-radius));
            let dhi = (&ub - &x).map(|v| v.min(radius));
            let (mut step, b) = model_step(
                &h,
                &e,
                &x,
                &lb,
                &ub,
                &y,
                &dlo,
                &dhi,
                rho,
                opts.hessian_floor,
            )?;
            if step.elastic {
                rho = (2.0 * rho).min(MAX_PENALTY);
            }
            let ymax = step.y.eq.amax().max(step.y.ineq.amax());
            if ymax.is_finite() {
                rho = rho.max(1.5 * ymax + 1e-3);
            }
            // multipliers of the trust-region box are not problem multipliers
            for i in 0..n {
                let at_lb = (dlo[i] - (lb[i] - x[i])).abs() <= 0.0 && step.d[i] <= dlo[i] + 1e-12;
                let at_ub = (dhi[i] - (ub[i] - x[i])).abs() <= 0.0 && step.d[i] >= dhi[i] - 1e-12;
                if !(at_lb || at_ub) {
                    step.y.bounds[i] = 0.0;
                }
            }

            let (phi0, _, _) = merit(p, &x, rho)?;
            let lin_e = &e.ce + &e.je * &step.d;
            let lin_i = &e.ci + &e.ji * &step.d;
            let pred = -(e.g.dot(&step.d) + 0.5 * step.d.dot(&(&b * &step.d)))
                + rho * (viol0 - violation(&lin_e, &lin_i));
            let pred = pred.max(1e-16 * (1.0 + phi0.abs()));
            let dnorm = step.d.amax();

            let trial = project(&(&x + &step.d), &lb, &ub);
            let (phi, ce_t, ci_t) = merit(p, &trial, rho)?;
            let mut ratio = (phi0 - phi) / pred;
            let mut candidate = trial;
            if ratio < ACCEPT_RATIO && !step.elastic {
                // second-order correction against the Maratos effect
                let shift_e = &ce_t - &e.je * &step.d;
                let shift_i = &ci_t - &e.ji * &step.d;
                let grad = &e.g;
                if let Ok(soc) = subproblem(&b, grad, &e, &shift_e, &shift_i, &dlo, &dhi, rho) {
                    if !soc.elastic {
                        let trial = project(&(&x + &soc.d), &lb, &ub);
                        if let Ok((phi, _, _)) = merit(p, &trial, rho) {
                            if (phi0 - phi) / pred > ratio {
                                ratio = (phi0 - phi) / pred;
                                candidate = trial;
                            }
                        }
                    }
                }
            }
            if ratio >= ACCEPT_RATIO {
                if ratio > 0.75 && dnorm >= 0.99 * radius {
                    radius = (2.0 * radius).min(MAX_RADIUS);
                } else if ratio < 0.25 {
                    radius = (0.5 * radius).max(MIN_RADIUS);
                }
                accepted = Some((candidate, step, viol0));
                break;
            }
            radius = (0.5 * dnorm).max(MIN_RADIUS);
            last = Some(step);
            if dnorm <= MIN_RADIUS {
                break;
            }
        }
        let (x_new, step) = match accepted {
            Some((v, step, _)) => (v, step),
            None => {
                debug!("SQP trust region collapsed at iteration {iter}");
                let step = last.expect("at least one trust-region trial");
                (x.clone(), step)
            }
        };

        if step.elastic {
            // the linearized violation cannot be reduced below the current one
            if step.slack > opts.constraint_tol && step.slack >= viol0 - 1e-9 * (1.0 + viol0) {
                infeasible_hits += 1;
            } else {
                infeasible_hits = 0;
            }
            if infeasible_hits >= 2 {
                let residuals = KktResiduals {
                    primal: max_violation(&e.ce, &e.ci),
                    ..Default::default()
                };
                let mut report =
                    SolveReport::from_residuals(SolveStatus::Infeasible, iter, start, &residuals);
                report.violated = None;
                return Ok(NlpSolution {
                    objective: e.f,
                    x,
                    multipliers: step.y,
                    residuals,
                    report,
                });
            }
        }

        y = step.y;
        x = x_new;
        e = evaluate(p, &x)?;

        let residuals = nlp_kkt_residuals(p, &x, &y)?;
        let score = residuals
            .stationarity
            .max(residuals.dual)
            .max(residuals.complementarity)
            .max(residuals.primal / opts.constraint_tol * opts.tol);
        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, x.clone(), y.clone(), residuals));
        }
        let done = residuals.stationarity <= opts.tol
            && residuals.dual <= opts.tol
            && residuals.complementarity <= opts.tol
            && residuals.primal <= opts.constraint_tol;
        if done {
            let report = SolveReport::from_residuals(SolveStatus::Optimal, iter, start, &residuals);
            return Ok(NlpSolution {
                objective: e.f,
                x,
                multipliers: y,
                residuals,
                report,
            });
        }
    }

    let (_, x, y, residuals) = best.expect("at least one iteration");
    let objective = p.objective(&x)?;
    let report =
        SolveReport::from_residuals(SolveStatus::MaxIter, opts.max_iter, start, &residuals);
    Ok(NlpSolution {
        x,
        multipliers: y,
        objective,
        residuals,
        report,
    })
}
