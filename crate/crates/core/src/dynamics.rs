//! Unified robot-object rigid-body dynamics in linear state-space form.
//!
//! Sign convention: `F_h,n` is the force hand `n` applies to the object, so the
//! object receives `+F_h,n` and the robot trunk receives `-F_h,n`. Foot forces
//! and moments are ground reactions acting on the robot. With this convention a
//! forward push has `F_h,x > 0` and the steady-state pushing force equals the
//! kinetic friction `mu_g m_o g`.
//!
//! Ground friction on the object acts at the projection of its CoM and always
//! along the object's heading. Its moment about the CoM is `-(h/2) mu_g m_o g`
//! about the object's (yaw-rotated) y axis, i.e. it opposes the forward-tipping
//! moment of a push above the CoM.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{check_pitch, BodyPoints, RobotModel};
use crate::math::{euler_to_rotation, rot_z, skew};

pub const GRAVITY: f64 = 9.81;
pub const STATE_DIM: usize = 27;
pub const INPUT_DIM: usize = 16;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Offsets of each block inside the 27-entry state vector.
pub mod idx {
    pub const ROBOT_EULER: usize = 0;
    pub const ROBOT_POS: usize = 3;
    pub const ROBOT_OMEGA: usize = 6;
    pub const ROBOT_VEL: usize = 9;
    pub const OBJECT_EULER: usize = 12;
    pub const OBJECT_POS: usize = 15;
    pub const OBJECT_OMEGA: usize = 18;
    pub const OBJECT_VEL: usize = 21;
    pub const GRAVITY: usize = 24;

    /// Control-input offsets.
    pub const fn hand(n: usize) -> usize {
        3 * n
    }
    pub const fn foot(m: usize) -> usize {
        6 + 3 * m
    }
    pub const fn moment(m: usize) -> usize {
        12 + 2 * m
    }
}

/// Box-shaped object pushed along its local x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectParams {
    /// Side length along the pushing direction (m).
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    /// Object-ground kinetic friction coefficient.
    pub ground_friction: f64,
    /// Body-frame inertia; a uniform-density box when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[[f64; 3]; 3]>,
}

impl ObjectParams {
    pub fn cube(side: f64, mass: f64, ground_friction: f64) -> Self {
        Self {
            length: side,
            width: side,
            height: side,
            mass,
            ground_friction,
            inertia: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidParameter(
                "object dimensions must be positive".into(),
            ));
        }
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter(
                "object mass must be positive".into(),
            ));
        }
        if !(self.ground_friction > 0.0 && self.ground_friction < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "ground friction {} outside (0, 2)",
                self.ground_friction
            )));
        }
        let i = self.inertia_body();
        if (i - i.transpose()).abs().max() > 1e-12 || i.cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "object inertia must be symmetric positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn inertia_body(&self) -> Matrix3<f64> {
        match self.inertia {
            Some(i) => Matrix3::new(
                i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2],
            ),
            None => {
                let (l, w, h, m) = (self.length, self.width, self.height, self.mass);
                Matrix3::from_diagonal(&Vector3::new(
                    m * (w * w + h * h) / 12.0,
                    m * (l * l + h * h) / 12.0,
                    m * (l * l + w * w) / 12.0,
                ))
            }
        }
    }

    /// Magnitude of the kinetic friction force `mu_g m_o g`.
    pub fn friction_force(&self) -> f64 {
        self.ground_friction * self.mass * GRAVITY
    }
}

/// The 27-entry state of the coupled robot-object system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedState {
    pub robot_euler: Vector3<f64>,
    pub robot_position: Vector3<f64>,
    pub robot_omega: Vector3<f64>,
    pub robot_velocity: Vector3<f64>,
    pub object_euler: Vector3<f64>,
    pub object_position: Vector3<f64>,
    pub object_omega: Vector3<f64>,
    pub object_velocity: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl Default for UnifiedState {
    fn default() -> Self {
        Self {
            robot_euler: Vector3::zeros(),
            robot_position: Vector3::zeros(),
            robot_omega: Vector3::zeros(),
            robot_velocity: Vector3::zeros(),
            object_euler: Vector3::zeros(),
            object_position: Vector3::zeros(),
            object_omega: Vector3::zeros(),
            object_velocity: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
        }
    }
}

impl UnifiedState {
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        let blocks = [
            &self.robot_euler,
            &self.robot_position,
            &self.robot_omega,
            &self.robot_velocity,
            &self.object_euler,
            &self.object_position,
            &self.object_omega,
            &self.object_velocity,
            &self.gravity,
        ];
        for (k, b) in blocks.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * k).copy_from(*b);
        }
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        let b = |k: usize| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
        Self {
            robot_euler: b(0),
            robot_position: b(1),
            robot_omega: b(2),
            robot_velocity: b(3),
            object_euler: b(4),
            object_position: b(5),
            object_omega: b(6),
            object_velocity: b(7),
            gravity: b(8),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Hand forces, foot forces and 2-D foot moments (about world y and z).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub hand_forces: [Vector3<f64>; 2],
    pub foot_forces: [Vector3<f64>; 2],
    pub foot_moments: [Vector2<f64>; 2],
}

impl ControlInput {
    pub fn to_vector(&self) -> InputVector {
        let mut u = InputVector::zeros();
        for n in 0..2 {
            u.fixed_rows_mut::<3>(idx::hand(n))
                .copy_from(&self.hand_forces[n]);
            u.fixed_rows_mut::<3>(idx::foot(n))
                .copy_from(&self.foot_forces[n]);
            u.fixed_rows_mut::<2>(idx::moment(n))
                .copy_from(&self.foot_moments[n]);
        }
        u
    }

    pub fn from_vector(u: &InputVector) -> Self {
        let v3 = |o: usize| Vector3::new(u[o], u[o + 1], u[o + 2]);
        let v2 = |o: usize| Vector2::new(u[o], u[o + 1]);
        Self {
            hand_forces: [v3(idx::hand(0)), v3(idx::hand(1))],
            foot_forces: [v3(idx::foot(0)), v3(idx::foot(1))],
            foot_moments: [v2(idx::moment(0)), v2(idx::moment(1))],
        }
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self::from_vector(&InputVector::from_column_slice(u))
    }
}

/// Moment selection `L = [0 0; 1 0; 0 1]`.
pub fn moment_selection() -> SMatrix<f64, 3, 2> {
    SMatrix::<f64, 3, 2>::new(0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
}

/// Continuous-time linear model evaluated at one operating point.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub points: BodyPoints,
    pub object_yaw: f64,
}

/// Maps Euler-angle rates to world angular velocity: `omega = S(theta) theta_dot`.
pub fn euler_rate_map(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(theta.y)?;
    let (st, ct) = theta.y.sin_cos();
    let (sp, cp) = theta.z.sin_cos();
    Ok(Matrix3::new(
        ct * cp,
        -sp,
        0.0,
        ct * sp,
        cp,
        0.0,
        -st,
        0.0,
        1.0,
    ))
}

/// Closed-form `S(theta)^{-1}`.
pub fn euler_rate_map_inverse(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(theta.y)?;
    let (st, ct) = theta.y.sin_cos();
    let (sp, cp) = theta.z.sin_cos();
    let tt = st / ct;
    Ok(Matrix3::new(
        cp / ct,
        sp / ct,
        0.0,
        -sp,
        cp,
        0.0,
        cp * tt,
        sp * tt,
        1.0,
    ))
}

/// World-frame friction vector `R_z(yaw) [mu_g m_o g, 0, 0]`; the object
/// receives its negative.
pub fn object_friction(params: &ObjectParams, yaw: f64) -> Vector3<f64> {
    rot_z(yaw) * Vector3::new(params.friction_force(), 0.0, 0.0)
}

fn world_inertia(rot: &Matrix3<f64>, body: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let world = rot * body * rot.transpose();
    world
        .try_inverse()
        .filter(|_| body.cholesky().is_some())
        .ok_or_else(|| Error::InvalidParameter("inertia is not positive definite".into()))
}

/// Assembles `x_dot = A x + B u` at state `x` with contact points `points`.
pub fn build_state_space(
    model: &RobotModel,
    params: &ObjectParams,
    x: &UnifiedState,
    points: &BodyPoints,
) -> Result<StateSpace> {
    let s_inv_robot = euler_rate_map_inverse(&x.robot_euler)?;
    let s_inv_object = euler_rate_map_inverse(&x.object_euler)?;
    if !(model.mass > 0.0) || !(params.mass > 0.0) {
        return Err(Error::InvalidParameter("masses must be positive".into()));
    }
    let robot_inv_inertia =
        world_inertia(&euler_to_rotation(&x.robot_euler), &model.inertia_body())?;
    let object_inv_inertia =
        world_inertia(&euler_to_rotation(&x.object_euler), &params.inertia_body())?;
    let yaw = x.object_euler.z;
    let heading = rot_z(yaw);

    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(idx::ROBOT_EULER, idx::ROBOT_OMEGA)
        .copy_from(&s_inv_robot);
    a.fixed_view_mut::<3, 3>(idx::ROBOT_POS, idx::ROBOT_VEL)
        .copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(idx::ROBOT_VEL, idx::GRAVITY)
        .copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(idx::OBJECT_EULER, idx::OBJECT_OMEGA)
        .copy_from(&s_inv_object);
    a.fixed_view_mut::<3, 3>(idx::OBJECT_POS, idx::OBJECT_VEL)
        .copy_from(&Matrix3::identity());
    // Friction terms scale with the gravity state g_z = -g.
    let mu = params.ground_friction;
    let moment_col =
        object_inv_inertia * heading * Vector3::y() * (0.5 * params.height * mu * params.mass);
    a.fixed_view_mut::<3, 1>(idx::OBJECT_OMEGA, idx::GRAVITY + 2)
        .copy_from(&moment_col);
    let mut accel_col = heading * Vector3::x() * mu;
    accel_col.z = 0.0;
    a.fixed_view_mut::<3, 1>(idx::OBJECT_VEL, idx::GRAVITY + 2)
        .copy_from(&accel_col);

    let mut b = InputMatrix::zeros();
    let eye = Matrix3::<f64>::identity();
    let d_planar = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    for n in 0..2 {
        let r_hand_c = points.hands[n] - x.robot_position;
        let r_hand_o = points.hands[n] - x.object_position;
        let r_foot_c = points.feet[n] - x.robot_position;
        let h = idx::hand(n);
        let f = idx::foot(n);
        b.fixed_view_mut::<3, 3>(idx::ROBOT_OMEGA, h)
            .copy_from(&(-robot_inv_inertia * skew(&r_hand_c)));
        b.fixed_view_mut::<3, 3>(idx::ROBOT_OMEGA, f)
            .copy_from(&(robot_inv_inertia * skew(&r_foot_c)));
        b.fixed_view_mut::<3, 2>(idx::ROBOT_OMEGA, idx::moment(n))
            .copy_from(&(robot_inv_inertia * moment_selection()));
        b.fixed_view_mut::<3, 3>(idx::ROBOT_VEL, h)
            .copy_from(&(-eye / model.mass));
        b.fixed_view_mut::<3, 3>(idx::ROBOT_VEL, f)
            .copy_from(&(eye / model.mass));
        b.fixed_view_mut::<3, 3>(idx::OBJECT_OMEGA, h)
            .copy_from(&(object_inv_inertia * skew(&r_hand_o)));
        b.fixed_view_mut::<3, 3>(idx::OBJECT_VEL, h)
            .copy_from(&(d_planar / params.mass));
    }
    Ok(StateSpace {
        a,
        b,
        points: *points,
        object_yaw: yaw,
    })
}

impl StateSpace {
    pub fn derivative(&self, x: &StateVector, u: &InputVector) -> StateVector {
        self.a * x + self.b * u
    }
}

/// Forward-Euler discretization `A_d = I + A dt`, `B_d = B dt`.
pub fn discretize(ss: &StateSpace, dt: f64) -> (StateMatrix, InputMatrix) {
    debug_assert!(dt >= 0.0);
    (StateMatrix::identity() + ss.a * dt, ss.b * dt)
}
