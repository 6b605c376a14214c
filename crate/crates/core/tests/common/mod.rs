//! Shared oracles for the integration tests.

#![allow(dead_code)]

use locomanip::dynamics::{ControlInput, ObjectParams, UnifiedState, GRAVITY};
use locomanip::kinematics::{body_points, BasePose, BodyPoints, RobotModel, NUM_JOINTS};
use locomanip::solvers::QpProblem;
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One half-space `a' x >= b`.
pub struct HalfSpace {
    pub a: DVector<f64>,
    pub b: f64,
}

pub fn half_spaces(p: &QpProblem) -> Vec<HalfSpace> {
    let n = p.num_vars();
    let mut out = Vec::new();
    for i in 0..p.ineq_matrix.nrows() {
        let a = p.ineq_matrix.row(i).transpose();
        if p.ineq_lower[i].is_finite() {
            out.push(HalfSpace {
                a: a.clone(),
                b: p.ineq_lower[i],
            });
        }
        if p.ineq_upper[i].is_finite() {
            out.push(HalfSpace {
                a: -a,
                b: -p.ineq_upper[i],
            });
        }
    }
    for i in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        if p.var_lower[i].is_finite() {
            out.push(HalfSpace {
                a: e.clone(),
                b: p.var_lower[i],
            });
        }
        if p.var_upper[i].is_finite() {
            out.push(HalfSpace {
                a: -e,
                b: -p.var_upper[i],
            });
        }
    }
    out
}

/// Enumerates every active set of size <= n, solves its KKT system and keeps the
/// primal- and dual-feasible point with the lowest cost.
pub fn brute_force(p: &QpProblem) -> Option<DVector<f64>> {
    let rows = half_spaces(p);
    let m = rows.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset = Vec::new();
    fn recurse(
        start: usize,
        subset: &mut Vec<usize>,
        p: &QpProblem,
        rows: &[HalfSpace],
        best: &mut Option<(f64, DVector<f64>)>,
    ) {
        let n = p.num_vars();
        let k = subset.len();
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        rhs.rows_mut(0, n).copy_from(&(-&p.linear));
        for (j, &r) in subset.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + j)] = -rows[r].a[i];
                kkt[(n + j, i)] = rows[r].a[i];
            }
            rhs[n + j] = rows[r].b;
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            let x = sol.rows(0, n).into_owned();
            let dual_ok = (0..k).all(|j| sol[n + j] >= -1e-9);
            let primal_ok = rows.iter().all(|h| h.a.dot(&x) - h.b >= -1e-9);
            if dual_ok && primal_ok && sol.iter().all(|v| v.is_finite()) {
                let cost = p.objective(&x);
                if best.as_ref().map_or(true, |b| cost < b.0) {
                    *best = Some((cost, x));
                }
            }
        }
        if k == n {
            return;
        }
        for r in start..rows.len() {
            subset.push(r);
            recurse(r + 1, subset, p, rows, best);
            subset.pop();
        }
    }
    let _ = m;
    recurse(0, &mut subset, p, &rows, &mut best);
    best.map(|b| b.1)
}

pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.gen_range(2..=6);
    let m = rng.gen_range(0..=8);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-8.0..8.0));
    let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let ax = &a * &x_feas;
    let lower = DVector::from_fn(m, |i, _| ax[i] - rng.gen_range(0.0..0.5));
    let upper = DVector::from_fn(m, |i, _| {
        if rng.gen_bool(0.3) {
            ax[i] + rng.gen_range(0.1..1.0)
        } else {
            f64::INFINITY
        }
    });
    let lb = DVector::from_fn(n, |i, _| x_feas[i] - rng.gen_range(0.2..1.5));
    let ub = DVector::from_fn(n, |i, _| x_feas[i] + rng.gen_range(0.2..1.5));
    QpProblem::new(h, f)
        .with_inequalities(a, lower, upper)
        .with_bounds(lb, ub)
}

pub fn axis_rot(axis: Vector3<f64>, a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), a).into_inner()
}

pub fn rotation(e: &Vector3<f64>) -> Matrix3<f64> {
    axis_rot(Vector3::z(), e.z) * axis_rot(Vector3::y(), e.y) * axis_rot(Vector3::x(), e.x)
}

/// Euler rates from world angular velocity, by solving
/// `omega = roll_rate * Rz Ry x + pitch_rate * Rz y + yaw_rate * z`.
pub fn euler_rates(e: &Vector3<f64>, omega: &Vector3<f64>) -> Vector3<f64> {
    let rz = axis_rot(Vector3::z(), e.z);
    let ry = axis_rot(Vector3::y(), e.y);
    let s = Matrix3::from_columns(&[rz * ry * Vector3::x(), rz * Vector3::y(), Vector3::z()]);
    s.lu().solve(omega).unwrap()
}

/// Rigid-body and object equations evaluated term by term.
pub fn dynamics_oracle(
    model: &RobotModel,
    obj: &ObjectParams,
    x: &UnifiedState,
    u: &ControlInput,
    pts: &BodyPoints,
) -> UnifiedState {
    let rr = rotation(&x.robot_euler);
    let ro = rotation(&x.object_euler);
    let robot_inertia = rr * model.inertia_body() * rr.transpose();
    let object_inertia = ro * obj.inertia_body() * ro.transpose();

    let mut robot_torque = Vector3::zeros();
    let mut robot_force = Vector3::zeros();
    let mut object_torque = Vector3::zeros();
    let mut hand_sum = Vector3::zeros();
    for n in 0..2 {
        let fh = u.hand_forces[n];
        let ff = u.foot_forces[n];
        let m = u.foot_moments[n];
        robot_torque += (pts.feet[n] - x.robot_position).cross(&ff) + Vector3::new(0.0, m.x, m.y);
        robot_torque -= (pts.hands[n] - x.robot_position).cross(&fh);
        robot_force += ff - fh;
        object_torque += (pts.hands[n] - x.object_position).cross(&fh);
        hand_sum += fh;
    }
    let yaw = x.object_euler.z;
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let side = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let g_z = x.gravity.z;
    let mu = obj.ground_friction;
    // Friction enters through the gravity state; moment applied as printed.
    object_torque += side * (0.5 * obj.height * mu * obj.mass * g_z);
    let mut object_accel = hand_sum / obj.mass + heading * (mu * g_z);
    object_accel.z = 0.0;

    UnifiedState {
        robot_euler: euler_rates(&x.robot_euler, &x.robot_omega),
        robot_position: x.robot_velocity,
        robot_omega: robot_inertia.lu().solve(&robot_torque).unwrap(),
        robot_velocity: robot_force / model.mass + x.gravity,
        object_euler: euler_rates(&x.object_euler, &x.object_omega),
        object_position: x.object_velocity,
        object_omega: object_inertia.lu().solve(&object_torque).unwrap(),
        object_velocity: object_accel,
        gravity: Vector3::zeros(),
    }
}

pub fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(-s..s),
        rng.gen_range(-s..s),
        rng.gen_range(-s..s),
    )
}

pub fn random_sample(
    rng: &mut ChaCha8Rng,
    model: &RobotModel,
) -> (ObjectParams, UnifiedState, ControlInput, BodyPoints) {
    let mut obj = ObjectParams::cube(0.5, 10.0, 0.5);
    obj.length = rng.gen_range(0.3..1.0);
    obj.width = rng.gen_range(0.3..1.0);
    obj.height = rng.gen_range(0.3..1.0);
    obj.mass = rng.gen_range(1.0..20.0);
    obj.ground_friction = rng.gen_range(0.2..0.7);
    let x = UnifiedState {
        robot_euler: Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-3.1..3.1),
        ),
        robot_position: v3(rng, 1.0) + Vector3::new(0.0, 0.0, 0.5),
        robot_omega: v3(rng, 2.0),
        robot_velocity: v3(rng, 1.0),
        object_euler: Vector3::new(0.0, 0.0, rng.gen_range(-3.1..3.1)),
        object_position: v3(rng, 2.0),
        object_omega: v3(rng, 1.0),
        object_velocity: v3(rng, 1.0),
        gravity: Vector3::new(0.0, 0.0, -GRAVITY),
    };
    let u = ControlInput {
        hand_forces: [v3(rng, 100.0), v3(rng, 100.0)],
        foot_forces: [v3(rng, 200.0), v3(rng, 200.0)],
        foot_moments: [nalgebra::Vector2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            2],
    };
    let mut q = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        q[j] = rng.gen_range(model.joint_lower[j]..model.joint_upper[j]);
    }
    let pts = body_points(model, &BasePose::new(x.robot_position, x.robot_euler), &q);
    (obj, x, u, pts)
}
