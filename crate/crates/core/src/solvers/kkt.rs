//! First-order optimality residuals, computed from the problem data alone.
//!
//! Nothing here touches solver internals; the checks are used both by the
//! solvers' own reports and by tests that audit them.
//!
//! Scaling: stationarity is divided by `1 + max(|grad|_inf, |Hx|_inf)`,
//! primal violations by `1 + |rhs|`, complementarity products by `1 + |y|`.

use nalgebra::{DMatrix, DVector};

use super::nlp::NlpProblem;
use super::qp::QpProblem;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn is_finite(&self) -> bool {
        self.max().is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpMultipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub bounds: DVector<f64>,
}

impl QpMultipliers {
    pub fn zeros(p: &QpProblem) -> Self {
        Self {
            eq: DVector::zeros(p.eq_rhs.len()),
            ineq: DVector::zeros(p.ineq_lower.len()),
            bounds: DVector::zeros(p.num_vars()),
        }
    }
}

/// Residual contributions of one two-sided row `lo <= value <= hi` with multiplier `y`.
fn two_sided(value: f64, lo: f64, hi: f64, y: f64, r: &mut KktResiduals) {
    let viol = if value < lo {
        (lo - value) / (1.0 + lo.abs())
    } else if value > hi {
        (value - hi) / (1.0 + hi.abs())
    } else {
        0.0
    };
    r.primal = r.primal.max(viol);
    if lo == hi {
        return;
    }
    if y > 0.0 {
        if lo.is_finite() {
            r.complementarity = r.complementarity.max(y * (value - lo).abs() / (1.0 + y));
        } else {
            r.dual = r.dual.max(y);
        }
    } else if y < 0.0 {
        if hi.is_finite() {
            r.complementarity = r.complementarity.max(-y * (hi - value).abs() / (1.0 - y));
        } else {
            r.dual = r.dual.max(-y);
        }
    }
}

pub fn qp_kkt_residuals(p: &QpProblem, x: &DVector<f64>, y: &QpMultipliers) -> KktResiduals {
    let hx = &p.hessian * x;
    let mut grad = &hx + &p.linear;
    grad -= p.eq_matrix.transpose() * &y.eq;
    grad -= p.ineq_matrix.transpose() * &y.ineq;
    grad -= &y.bounds;
    let scale = 1.0 + hx.amax().max(p.linear.amax());
    let mut r = KktResiduals {
        stationarity: grad.amax() / scale,
        ..Default::default()
    };

    let eq_val = &p.eq_matrix * x;
    for i in 0..eq_val.len() {
        let b = p.eq_rhs[i];
        r.primal = r.primal.max((eq_val[i] - b).abs() / (1.0 + b.abs()));
    }
    let in_val = &p.ineq_matrix * x;
    for i in 0..in_val.len() {
        two_sided(
            in_val[i],
            p.ineq_lower[i],
            p.ineq_upper[i],
            y.ineq[i],
            &mut r,
        );
    }
    for i in 0..x.len() {
        two_sided(x[i], p.var_lower[i], p.var_upper[i], y.bounds[i], &mut r);
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpMultipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub bounds: DVector<f64>,
}

impl NlpMultipliers {
    pub fn zeros(n: usize, n_eq: usize, n_ineq: usize) -> Self {
        Self {
            eq: DVector::zeros(n_eq),
            ineq: DVector::zeros(n_ineq),
            bounds: DVector::zeros(n),
        }
    }
}

/// KKT residuals for `min f(x)` s.t. `c_E(x) = 0`, `c_I(x) >= 0`, `lb <= x <= ub`.
///
/// Uses the problem's own derivative callbacks evaluated at `x`.
pub fn nlp_kkt_residuals<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    y: &NlpMultipliers,
) -> Result<KktResiduals> {
    let g = p.gradient(x)?;
    let ce = p.eq_constraints(x)?;
    let ci = p.ineq_constraints(x)?;
    let je: DMatrix<f64> = p.eq_jacobian(x)?;
    let ji: DMatrix<f64> = p.ineq_jacobian(x)?;
    let (lb, ub) = p.bounds();

    let mut grad = g.clone();
    grad -= je.transpose() * &y.eq;
    grad -= ji.transpose() * &y.ineq;
    grad -= &y.bounds;
    let mut r = KktResiduals {
        stationarity: grad.amax() / (1.0 + g.amax()),
        ..Default::default()
    };

    r.primal = ce.amax();
    for i in 0..ci.len() {
        let lam = y.ineq[i];
        r.primal = r.primal.max(-ci[i]);
        r.dual = r.dual.max(-lam);
        r.complementarity = r
            .complementarity
            .max(lam.abs() * ci[i].abs() / (1.0 + lam.abs()));
    }
    for i in 0..x.len() {
        two_sided(x[i], lb[i], ub[i], y.bounds[i], &mut r);
    }
    Ok(r)
}
