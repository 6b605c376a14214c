//! Dense strictly convex QP solver (Goldfarb-Idnani dual active set).
//!
//! ```text
//! minimize    1/2 x' H x + f' x
//! subject to  A_eq x  = b_eq
//!             lb_in <= A_in x <= ub_in
//!             lb    <=   x    <= ub
//! ```
//!
//! Multiplier convention: a positive multiplier means the lower side of a
//! constraint is active, a negative one the upper side. Stationarity reads
//! `H x + f - A_eq' y_eq - A_in' y_in - y_bound = 0`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::kkt::{qp_kkt_residuals, QpMultipliers};
use super::{ConstraintRef, SolveReport, SolveStatus};
use crate::error::{Error, Result};

pub const DEFAULT_QP_TOL: f64 = 1e-8;

/// Smallest diagonal shift tried when `H` is not numerically positive definite.
pub const REGULARIZATION_START: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add constraints with the `with_*` builders.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
            var_lower: DVector::from_element(n, f64::NEG_INFINITY),
            var_upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(
        mut self,
        a: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        self.ineq_matrix = a;
        self.ineq_lower = lower;
        self.ineq_upper = upper;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.var_lower = lower;
        self.var_upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dims_ok = self.hessian.shape() == (n, n)
            && self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_lower.len()
            && self.ineq_matrix.nrows() == self.ineq_upper.len()
            && self.var_lower.len() == n
            && self.var_upper.len() == n;
        if !dims_ok {
            return Err(Error::InvalidParameter("inconsistent QP dimensions".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.hessian.amax()) {
            return Err(Error::InvalidParameter(format!(
                "QP Hessian not symmetric (gap {asym:e})"
            )));
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .all(|v| v.is_finite())
            && self
                .eq_matrix
                .iter()
                .chain(self.eq_rhs.iter())
                .all(|v| v.is_finite())
            && self.ineq_matrix.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("QP data"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: QpMultipliers,
    pub objective: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Equality,
    Inequality,
}

/// One normalized half-space `c' x >= b` (or `c' x = b`).
struct Row {
    normal: DVector<f64>,
    rhs: f64,
    scale: f64,
    kind: Kind,
    origin: ConstraintRef,
    /// +1 for lower sides and equalities, -1 for upper sides.
    side: f64,
}

fn collect_rows(p: &QpProblem) -> std::result::Result<Vec<Row>, ConstraintRef> {
    let n = p.num_vars();
    let mut rows = Vec::new();
    let mut push =
        |normal: DVector<f64>, rhs: f64, kind: Kind, origin: ConstraintRef, side: f64| {
            let scale = normal.norm();
            if scale > 0.0 {
                rows.push(Row {
                    normal: normal / scale,
                    rhs: rhs / scale,
                    scale,
                    kind,
                    origin,
                    side,
                });
            }
        };
    for i in 0..p.eq_matrix.nrows() {
        push(
            p.eq_matrix.row(i).transpose(),
            p.eq_rhs[i],
            Kind::Equality,
            ConstraintRef::Equality(i),
            1.0,
        );
    }
    for i in 0..p.ineq_matrix.nrows() {
        let (lo, hi) = (p.ineq_lower[i], p.ineq_upper[i]);
        if lo > hi {
            return Err(ConstraintRef::Inequality(i));
        }
        let a = p.ineq_matrix.row(i).transpose();
        if lo == hi {
            push(a, lo, Kind::Equality, ConstraintRef::Inequality(i), 1.0);
            continue;
        }
        if lo.is_finite() {
            push(
                a.clone(),
                lo,
                Kind::Inequality,
                ConstraintRef::Inequality(i),
                1.0,
            );
        }
        if hi.is_finite() {
            push(
                -a,
                -hi,
                Kind::Inequality,
                ConstraintRef::Inequality(i),
                -1.0,
            );
        }
    }
    for i in 0..n {
        let (lo, hi) = (p.var_lower[i], p.var_upper[i]);
        if lo > hi {
            return Err(ConstraintRef::Bound(i));
        }
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        if lo == hi {
            push(e, lo, Kind::Equality, ConstraintRef::Bound(i), 1.0);
            continue;
        }
        if lo.is_finite() {
            push(
                e.clone(),
                lo,
                Kind::Inequality,
                ConstraintRef::Bound(i),
                1.0,
            );
        }
        if hi.is_finite() {
            push(-e, -hi, Kind::Inequality, ConstraintRef::Bound(i), -1.0);
        }
    }
    Ok(rows)
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

struct ActiveSet {
    /// `J = L^{-T}` rotated so that its first `q` columns span the active normals.
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    rows: Vec<usize>,
    /// Sign applied to each active row (equalities may enter flipped).
    signs: Vec<f64>,
    u: Vec<f64>,
}

impl ActiveSet {
    fn q(&self) -> usize {
        self.rows.len()
    }

    fn add(&mut self, mut d: DVector<f64>, row: usize, sign: f64, u: f64) {
        let n = d.len();
        let q = self.q();
        for i in (q + 1..n).rev() {
            if d[i] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[i - 1], d[i]);
            d[i - 1] = h;
            d[i] = 0.0;
            for k in 0..n {
                let (a, b) = (self.j[(k, i - 1)], self.j[(k, i)]);
                self.j[(k, i - 1)] = c * a + s * b;
                self.j[(k, i)] = -s * a + c * b;
            }
        }
        for k in 0..=q {
            self.r[(k, q)] = d[k];
        }
        self.rows.push(row);
        self.signs.push(sign);
        self.u.push(u);
    }

    fn drop(&mut self, l: usize) {
        let q = self.q();
        let n = self.j.nrows();
        for col in l..q - 1 {
            for k in 0..q {
                self.r[(k, col)] = self.r[(k, col + 1)];
            }
        }
        for k in 0..q {
            self.r[(k, q - 1)] = 0.0;
        }
        for jj in l..q - 1 {
            let (c, s, h) = givens(self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            if h == 0.0 {
                continue;
            }
            for col in jj..q - 1 {
                let (a, b) = (self.r[(jj, col)], self.r[(jj + 1, col)]);
                self.r[(jj, col)] = c * a + s * b;
                self.r[(jj + 1, col)] = -s * a + c * b;
            }
            self.r[(jj + 1, jj)] = 0.0;
            for k in 0..n {
                let (a, b) = (self.j[(k, jj)], self.j[(k, jj + 1)]);
                self.j[(k, jj)] = c * a + s * b;
                self.j[(k, jj + 1)] = -s * a + c * b;
            }
        }
        self.rows.remove(l);
        self.signs.remove(l);
        self.u.remove(l);
    }

    /// Solves `R[0..q, 0..q] r = d[0..q]`.
    fn back_substitute(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

/// Cholesky factor of `H + eps I`, increasing `eps` until it succeeds.
fn factor(h: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, Option<f64>)> {
    if let Some(ch) = h.clone().cholesky() {
        let diag = ch.l_dirty().diagonal();
        let (mn, mx) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| {
            (a.min(v.abs()), b.max(v.abs()))
        });
        if mn > 1e-7 * mx.max(1e-300) {
            return Ok((ch, None));
        }
    }
    let scale = h.diagonal().amax().max(1.0);
    let mut eps = REGULARIZATION_START * scale;
    while eps < 1e3 * scale {
        let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * eps;
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch, Some(eps)));
        }
        eps *= 10.0;
    }
    Err(Error::Solver(
        "QP Hessian cannot be regularized to positive definite".into(),
    ))
}

/// Solves the QP to tolerance `tol` (applied to the scaled KKT residuals).
pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<QpSolution> {
    let start = Instant::now();
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "QP tolerance must be positive".into(),
        ));
    }
    let n = p.num_vars();
    let empty = QpMultipliers::zeros(p);

    let rows = match collect_rows(p) {
        Ok(r) => r,
        Err(origin) => {
            let report = SolveReport::infeasible(0, start, Some(origin));
            return Ok(QpSolution {
                x: DVector::zeros(n),
                multipliers: empty,
                objective: f64::NAN,
                report,
            });
        }
    };

    let (chol, regularization) = factor(&p.hessian)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let mut active = ActiveSet {
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        rows: Vec::new(),
        signs: Vec::new(),
        u: Vec::new(),
    };
    let mut x = -chol.solve(&p.linear);

    let mut eq_done = vec![false; rows.len()];
    let mut iterations = 0usize;
    let max_iter = 50 * (n + rows.len()) + 100;
    let viol_tol = |x: &DVector<f64>| 1e-12 * (1.0 + x.amax());

    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            let report = SolveReport::max_iter(iterations, start);
            let multipliers = recover_multipliers(p, &rows, &active);
            return Ok(QpSolution {
                objective: p.objective(&x),
                x,
                multipliers,
                report,
            });
        }
        // Pick the next constraint: pending equalities first, then the most violated inequality.
        let thr = viol_tol(&x);
        let mut choice: Option<(usize, f64)> = None;
        for (i, row) in rows.iter().enumerate() {
            if let Kind::Equality = row.kind {
                if !eq_done[i] {
                    let s = row.normal.dot(&x) - row.rhs;
                    let sign = if s > 0.0 { -1.0 } else { 1.0 };
                    choice = Some((i, sign));
                    break;
                }
            }
        }
        if choice.is_none() {
            let mut worst = -thr;
            for (i, row) in rows.iter().enumerate() {
                if let Kind::Inequality = row.kind {
                    if active.rows.contains(&i) {
                        continue;
                    }
                    let s = row.normal.dot(&x) - row.rhs;
                    if s < worst {
                        worst = s;
                        choice = Some((i, 1.0));
                    }
                }
            }
        }
        let Some((p_idx, sign)) = choice else { break };
        let np = &rows[p_idx].normal * sign;
        let bp = rows[p_idx].rhs * sign;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                continue 'outer;
            }
            let q = active.q();
            let d = active.j.transpose() * &np;
            let z = active.j.columns(q, n - q) * d.rows(q, n - q);
            let r = active.back_substitute(&d);
            let s_p = np.dot(&x) - bp;

            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for k in 0..q {
                if let Kind::Inequality = rows[active.rows[k]].kind {
                    if r[k] > 0.0 {
                        let ratio = active.u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_idx = Some(k);
                        }
                    }
                }
            }
            let znp = z.dot(&np);
            let t2 = if z.norm() > 1e-14 && znp > 1e-300 {
                -s_p / znp
            } else {
                f64::INFINITY
            };

            if let Kind::Equality = rows[p_idx].kind {
                if !t2.is_finite() && s_p.abs() <= thr {
                    // consistent but linearly dependent on the active set
                    eq_done[p_idx] = true;
                    continue 'outer;
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                let report = SolveReport::infeasible(iterations, start, Some(rows[p_idx].origin));
                let multipliers = recover_multipliers(p, &rows, &active);
                return Ok(QpSolution {
                    objective: p.objective(&x),
                    x,
                    multipliers,
                    report,
                });
            }
            if !t2.is_finite() {
                for k in 0..q {
                    active.u[k] -= t * r[k];
                }
                u_p += t;
                active.drop(drop_idx.expect("partial step without a blocking constraint"));
                continue;
            }
            x += &z * t;
            for k in 0..q {
                active.u[k] -= t * r[k];
            }
            u_p += t;
            if t2 <= t1 {
                active.add(d, p_idx, sign, u_p);
                if let Kind::Equality = rows[p_idx].kind {
                    eq_done[p_idx] = true;
                }
                continue 'outer;
            }
            active.drop(drop_idx.expect("blocking constraint"));
        }
    }

    // fixed variables come back exact rather than within rounding of their value
    for i in 0..n {
        if p.var_lower[i] == p.var_upper[i] {
            x[i] = p.var_lower[i];
        }
    }
    let multipliers = recover_multipliers(p, &rows, &active);
    let residuals = qp_kkt_residuals(p, &x, &multipliers);
    let mut report =
        SolveReport::from_residuals(SolveStatus::Optimal, iterations, start, &residuals);
    report.regularization = regularization;
    if residuals.max() > tol {
        report.status = SolveStatus::Inaccurate;
    }
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        multipliers,
        report,
    })
}

fn recover_multipliers(p: &QpProblem, rows: &[Row], active: &ActiveSet) -> QpMultipliers {
    let mut m = QpMultipliers::zeros(p);
    for (k, &ri) in active.rows.iter().enumerate() {
        let row = &rows[ri];
        let value = active.u[k] * active.signs[k] * row.side / row.scale;
        match row.origin {
            ConstraintRef::Equality(i) => m.eq[i] += value,
            ConstraintRef::Inequality(i) => m.ineq[i] += value,
            ConstraintRef::Bound(i) => m.bounds[i] += value,
        }
    }
    m
}
