mod common;

use common::{brute_force, half_spaces, random_qp};
use locomanip::solvers::{
    nlp_kkt_residuals, qp_kkt_residuals, solve_nlp, solve_qp, NlpOptions, NlpProblem, QpProblem,
    SolveStatus, DEFAULT_QP_TOL,
};
use locomanip::{Error, Result};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn qp_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut with_active = 0;
    for case in 0..250 {
        let p = random_qp(&mut rng);
        let sol = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Optimal, "case {case}");
        let oracle = brute_force(&p).expect("oracle finds the optimum");
        let gap = (&sol.x - &oracle).amax();
        assert!(gap < 1e-8, "case {case}: gap {gap:e}");
        let active = half_spaces(&p)
            .iter()
            .filter(|h| (h.a.dot(&oracle) - h.b).abs() < 1e-9)
            .count();
        if active >= 2 {
            with_active += 1;
        }
        let r = qp_kkt_residuals(&p, &sol.x, &sol.multipliers);
        assert!(r.max() <= DEFAULT_QP_TOL, "case {case}: {r:?}");
    }
    assert!(
        with_active >= 50,
        "only {with_active} instances had two or more active constraints"
    );
}

#[test]
fn qp_equality_and_inequality_mix() {
    // min x^2 + y^2 + z^2  s.t.  x + y + z = 3,  x - y >= 1
    let p = QpProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3))
        .with_equalities(
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            DVector::from_element(1, 3.0),
        )
        .with_inequalities(
            DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::INFINITY),
        );
    let sol = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
    // Lagrange conditions: x = (l + m)/2, y = (l - m)/2, z = l/2 with x - y = m = 1, 3l/2 = 3
    let expected = DVector::from_row_slice(&[1.5, 0.5, 1.0]);
    assert!((&sol.x - expected).amax() < 1e-12);
    assert!((sol.multipliers.ineq[0] - 1.0).abs() < 1e-12);
    assert!((sol.multipliers.eq[0] - 2.0).abs() < 1e-12);
}

#[test]
fn qp_equal_bounds_act_as_equalities() {
    let p = QpProblem::new(
        DMatrix::identity(2, 2),
        DVector::from_row_slice(&[1.0, 1.0]),
    )
    .with_bounds(
        DVector::from_row_slice(&[0.3, -1.0]),
        DVector::from_row_slice(&[0.3, 1.0]),
    );
    let sol = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
    assert!((sol.x[0] - 0.3).abs() < 1e-15);
    assert!((sol.x[1] + 1.0).abs() < 1e-14);
}

#[test]
fn qp_redundant_equalities_are_tolerated() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_equalities(a, DVector::from_row_slice(&[1.0, 2.0]));
    let sol = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
}

#[test]
fn qp_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let p = random_qp(&mut rng);
        let a = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
        let b = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.multipliers, b.multipliers);
        assert_eq!(a.report.iterations, b.report.iterations);
    }
}

#[test]
fn qp_rejects_malformed_input() {
    let p = QpProblem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        DVector::zeros(2),
    );
    assert!(matches!(
        solve_qp(&p, 1e-8),
        Err(Error::InvalidParameter(_))
    ));
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
    assert!(solve_qp(&p, 1e-8).is_err());
    let p = QpProblem::new(
        DMatrix::identity(2, 2),
        DVector::from_row_slice(&[f64::NAN, 0.0]),
    );
    assert!(matches!(solve_qp(&p, 1e-8), Err(Error::NonFinite(_))));
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
    assert!(solve_qp(&p, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn qp_solutions_pass_the_kkt_checker(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng);
        let sol = solve_qp(&p, DEFAULT_QP_TOL).unwrap();
        prop_assert_eq!(sol.report.status, SolveStatus::Optimal);
        let r = qp_kkt_residuals(&p, &sol.x, &sol.multipliers);
        prop_assert!(r.max() <= DEFAULT_QP_TOL);
        prop_assert!(sol.report.max_residual().is_finite());
    }
}

struct Rosenbrock;

impl NlpProblem for Rosenbrock {
    fn num_vars(&self) -> usize {
        2
    }
    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let t = x[1] - x[0] * x[0];
        Ok(DVector::from_row_slice(&[
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * t,
            200.0 * t,
        ]))
    }
    fn initial_guess(&self) -> DVector<f64> {
        DVector::from_row_slice(&[-1.2, 1.0])
    }
}

#[test]
fn nlp_rosenbrock() {
    let sol = solve_nlp(
        &Rosenbrock,
        &NlpOptions {
            tol: 1e-10,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    assert!(
        (sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6,
        "{}",
        sol.x
    );
}

/// min x^2 + y^2 s.t. x y = 1, derivatives by finite differences.
struct Hyperbola;

impl NlpProblem for Hyperbola {
    fn num_vars(&self) -> usize {
        2
    }
    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[0] * x[0] + x[1] * x[1])
    }
    fn eq_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, x[0] * x[1] - 1.0))
    }
    fn initial_guess(&self) -> DVector<f64> {
        DVector::from_row_slice(&[2.0, 0.7])
    }
}

#[test]
fn nlp_hyperbola_lagrange_point() {
    let sol = solve_nlp(&Hyperbola, &NlpOptions::default()).unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    // 2x = l y, 2y = l x, x y = 1  =>  x = y = +-1, l = 2
    assert!((sol.x[0].abs() - 1.0).abs() < 1e-6 && (sol.x[1].abs() - 1.0).abs() < 1e-6);
    assert!((sol.multipliers.eq[0] - 2.0).abs() < 1e-5);
    let r = nlp_kkt_residuals(&Hyperbola, &sol.x, &sol.multipliers).unwrap();
    assert!(r.max() <= 1e-6);
}

/// Projection of (2, 1) onto the unit disk.
struct Disk;

impl NlpProblem for Disk {
    fn num_vars(&self) -> usize {
        2
    }
    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2))
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_row_slice(&[
            2.0 * (x[0] - 2.0),
            2.0 * (x[1] - 1.0),
        ]))
    }
    fn ineq_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, 1.0 - x[0] * x[0] - x[1] * x[1]))
    }
    fn ineq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(1, 2, &[-2.0 * x[0], -2.0 * x[1]]))
    }
    fn initial_guess(&self) -> DVector<f64> {
        DVector::zeros(2)
    }
}

#[test]
fn nlp_disk_projection() {
    let sol = solve_nlp(&Disk, &NlpOptions::default()).unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    let s = 5f64.sqrt();
    assert!((sol.x[0] - 2.0 / s).abs() < 1e-6 && (sol.x[1] - 1.0 / s).abs() < 1e-6);
    // 2(x - c) = -2 l x  =>  l = sqrt(5) - 1
    assert!((sol.multipliers.ineq[0] - (s - 1.0)).abs() < 1e-5);
}

struct Contradiction {
    as_bounds: bool,
}

impl NlpProblem for Contradiction {
    fn num_vars(&self) -> usize {
        1
    }
    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(x[0] * x[0])
    }
    fn ineq_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.as_bounds {
            Ok(DVector::zeros(0))
        } else {
            Ok(DVector::from_row_slice(&[x[0] - 1.0, -x[0]]))
        }
    }
    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        if self.as_bounds {
            (DVector::from_element(1, 1.0), DVector::from_element(1, 0.0))
        } else {
            (
                DVector::from_element(1, f64::NEG_INFINITY),
                DVector::from_element(1, f64::INFINITY),
            )
        }
    }
    fn initial_guess(&self) -> DVector<f64> {
        DVector::from_element(1, 0.5)
    }
}

#[test]
fn nlp_contradictory_constraints_are_infeasible() {
    for as_bounds in [false, true] {
        let sol = solve_nlp(&Contradiction { as_bounds }, &NlpOptions::default()).unwrap();
        assert_eq!(
            sol.report.status,
            SolveStatus::Infeasible,
            "as_bounds = {as_bounds}"
        );
    }
}

struct Poisoned;

impl NlpProblem for Poisoned {
    fn num_vars(&self) -> usize {
        1
    }
    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(if x[0] > 0.5 {
            f64::NAN
        } else {
            (x[0] - 2.0).powi(2)
        })
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, 2.0 * (x[0] - 2.0)))
    }
    fn initial_guess(&self) -> DVector<f64> {
        DVector::zeros(1)
    }
}

#[test]
fn nlp_nan_is_an_evaluation_error() {
    assert!(matches!(
        solve_nlp(&Poisoned, &NlpOptions::default()),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn nlp_iteration_cap_returns_best_iterate() {
    let sol = solve_nlp(
        &Rosenbrock,
        &NlpOptions {
            max_iter: 3,
            tol: 1e-12,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(sol.report.status, SolveStatus::MaxIter);
    assert_eq!(sol.report.iterations, 3);
    assert!(sol.x.iter().all(|v| v.is_finite()));
    assert!(
        Rosenbrock.objective(&sol.x).unwrap()
            < Rosenbrock.objective(&Rosenbrock.initial_guess()).unwrap()
    );
}

#[test]
fn nlp_is_deterministic() {
    let a = solve_nlp(&Hyperbola, &NlpOptions::default()).unwrap();
    let b = solve_nlp(&Hyperbola, &NlpOptions::default()).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.report.iterations, b.report.iterations);
}
