//! Floating-base forward kinematics and contact Jacobians for the 16-joint humanoid.
//!
//! Joint ordering used everywhere in this crate:
//!
//! ```text
//!  0..5   left leg   [hip yaw, hip roll, hip pitch, knee, ankle pitch]
//!  5..10  right leg  [hip yaw, hip roll, hip pitch, knee, ankle pitch]
//! 10..13  left arm   [shoulder pitch, shoulder roll, elbow]
//! 13..16  right arm  [shoulder pitch, shoulder roll, elbow]
//! ```
//!
//! Body frame: x forward, y left, z up, origin at the trunk CoM. A positive pitch
//! leans the trunk forward. Each foot is a single contact point at the ankle; the
//! ankle pitch joint only changes the foot orientation, which is what the 2-D foot
//! moment input acts through.

use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{euler_rotation_partials, euler_to_rotation, rot_x, rot_y, rot_z};

pub const NUM_JOINTS: usize = 16;

/// Maps the 16-entry control input to joint torques via `tau = J^T u`.
pub type ContactJacobian = SMatrix<f64, 16, 16>;

/// Joint-limit slack accepted by the checked entry points.
pub const JOINT_LIMIT_TOL: f64 = 1e-6;

/// Pitch must stay this far from +-pi/2.
pub const PITCH_MARGIN: f64 = 1e-3;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "left_hip_yaw",
    "left_hip_roll",
    "left_hip_pitch",
    "left_knee",
    "left_ankle",
    "right_hip_yaw",
    "right_hip_roll",
    "right_hip_pitch",
    "right_knee",
    "right_ankle",
    "left_shoulder_pitch",
    "left_shoulder_roll",
    "left_elbow",
    "right_shoulder_pitch",
    "right_shoulder_roll",
    "right_elbow",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    /// +1 for left, -1 for right (lateral sign in the body frame).
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limb {
    Leg(Side),
    Arm(Side),
}

impl Limb {
    pub const ALL: [Limb; 4] = [
        Limb::Leg(Side::Left),
        Limb::Leg(Side::Right),
        Limb::Arm(Side::Left),
        Limb::Arm(Side::Right),
    ];

    pub fn joints(self) -> Range<usize> {
        match self {
            Limb::Leg(Side::Left) => 0..5,
            Limb::Leg(Side::Right) => 5..10,
            Limb::Arm(Side::Left) => 10..13,
            Limb::Arm(Side::Right) => 13..16,
        }
    }
}

/// Kinematic and inertial description of the robot. Lengths in m, angles in rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub mass: f64,
    /// Body-frame inertia about the CoM (kg m^2), row major.
    pub inertia: [[f64; 3]; 3],
    pub trunk_height: f64,
    pub hip_spacing: f64,
    pub shoulder_spacing: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub upper_arm_length: f64,
    pub lower_arm_length: f64,
    /// Reference CoM height when standing.
    pub standing_height: f64,
    pub joint_lower: [f64; NUM_JOINTS],
    pub joint_upper: [f64; NUM_JOINTS],
    pub tau_max: [f64; NUM_JOINTS],
    pub qdot_max: [f64; NUM_JOINTS],
}

impl Default for RobotModel {
    fn default() -> Self {
        let leg_lo = [-0.6, -0.5, -1.8, 0.0, -1.2];
        let leg_hi = [0.6, 0.5, 0.8, 2.6, 1.2];
        let arm_lo = [-3.1, -0.8, -2.6];
        let arm_hi = [1.0, 0.8, 0.0];
        let leg_tau = [33.5, 33.5, 33.5, 67.0, 33.5];
        let arm_tau = [33.5; 3];
        let mut joint_lower = [0.0; NUM_JOINTS];
        let mut joint_upper = [0.0; NUM_JOINTS];
        let mut tau_max = [0.0; NUM_JOINTS];
        for leg in [0..5, 5..10] {
            for (k, j) in leg.enumerate() {
                joint_lower[j] = leg_lo[k];
                joint_upper[j] = leg_hi[k];
                tau_max[j] = leg_tau[k];
            }
        }
        for arm in [10..13, 13..16] {
            for (k, j) in arm.enumerate() {
                joint_lower[j] = arm_lo[k];
                joint_upper[j] = arm_hi[k];
                tau_max[j] = arm_tau[k];
            }
        }
        Self {
            mass: 17.0,
            inertia: [[0.40, 0.0, 0.0], [0.0, 0.38, 0.0], [0.0, 0.0, 0.12]],
            trunk_height: 0.35,
            hip_spacing: 0.2,
            shoulder_spacing: 0.3,
            thigh_length: 0.22,
            shank_length: 0.22,
            upper_arm_length: 0.2,
            lower_arm_length: 0.2,
            standing_height: 0.55,
            joint_lower,
            joint_upper,
            tau_max,
            qdot_max: [21.0; NUM_JOINTS],
        }
    }
}

impl RobotModel {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let model: RobotModel = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidModel(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        let inertia = self.inertia_body();
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidModel("inertia is not symmetric".into()));
        }
        if inertia.cholesky().is_none() {
            return Err(Error::InvalidModel(
                "inertia is not positive definite".into(),
            ));
        }
        let lengths = [
            self.trunk_height,
            self.hip_spacing,
            self.shoulder_spacing,
            self.thigh_length,
            self.shank_length,
            self.upper_arm_length,
            self.lower_arm_length,
            self.standing_height,
        ];
        if lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidModel(
                "all link lengths must be positive".into(),
            ));
        }
        for j in 0..NUM_JOINTS {
            if !(self.joint_lower[j] < self.joint_upper[j]) {
                return Err(Error::InvalidModel(format!(
                    "joint {} has lower limit >= upper limit",
                    JOINT_NAMES[j]
                )));
            }
            if !(self.tau_max[j] > 0.0) || !(self.qdot_max[j] > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "joint {} needs positive torque and speed limits",
                    JOINT_NAMES[j]
                )));
            }
        }
        Ok(())
    }

    pub fn inertia_body(&self) -> Matrix3<f64> {
        let i = &self.inertia;
        Matrix3::new(
            i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2],
        )
    }

    pub fn hip_offset(&self, side: Side) -> Vector3<f64> {
        Vector3::new(
            0.0,
            side.sign() * self.hip_spacing / 2.0,
            -self.trunk_height / 2.0,
        )
    }

    pub fn shoulder_offset(&self, side: Side) -> Vector3<f64> {
        Vector3::new(
            0.0,
            side.sign() * self.shoulder_spacing / 2.0,
            self.trunk_height / 2.0,
        )
    }

    pub fn arm_reach(&self) -> f64 {
        self.upper_arm_length + self.lower_arm_length
    }

    /// Bent-knee standing configuration with the feet under the hips at
    /// `standing_height`, flat feet, and the hands roughly at shoulder height.
    pub fn standing_configuration(&self) -> [f64; NUM_JOINTS] {
        let (l1, l2) = (self.thigh_length, self.shank_length);
        let hip_height =
            (self.standing_height - self.trunk_height / 2.0).clamp(0.05, l1 + l2 - 1e-3);
        let cos_knee =
            ((hip_height * hip_height - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let knee = cos_knee.acos();
        let hip_pitch = (-l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        let ankle = -(hip_pitch + knee);
        let leg = [0.0, 0.0, hip_pitch, knee, ankle];
        let arm = [-std::f64::consts::FRAC_PI_2 + 0.2, 0.0, -0.4];
        let mut q = [0.0; NUM_JOINTS];
        q[0..5].copy_from_slice(&leg);
        q[5..10].copy_from_slice(&leg);
        q[10..13].copy_from_slice(&arm);
        q[13..16].copy_from_slice(&arm);
        q
    }

    pub fn check_joint_limits(&self, q: &[f64]) -> Result<()> {
        if q.len() != NUM_JOINTS {
            return Err(Error::InvalidParameter(format!(
                "expected 16 joint angles, got {}",
                q.len()
            )));
        }
        for (j, &v) in q.iter().enumerate() {
            let (lo, hi) = (self.joint_lower[j], self.joint_upper[j]);
            if !v.is_finite() || v < lo - JOINT_LIMIT_TOL || v > hi + JOINT_LIMIT_TOL {
                return Err(Error::JointLimit {
                    joint: j,
                    name: JOINT_NAMES[j],
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

/// Floating-base pose: CoM position and ZYX Euler angles `[roll, pitch, yaw]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BasePose {
    pub position: Vector3<f64>,
    pub euler: Vector3<f64>,
}

impl BasePose {
    pub fn new(position: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self { position, euler }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(&self.euler)
    }

    pub fn check_pitch(&self) -> Result<()> {
        check_pitch(self.euler.y)
    }
}

pub(crate) fn check_pitch(pitch: f64) -> Result<()> {
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN {
        return Err(Error::Singularity {
            pitch,
            margin: PITCH_MARGIN,
        });
    }
    Ok(())
}

/// World-frame contact and attachment points. Index 0 is left, 1 is right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoints {
    pub hands: [Vector3<f64>; 2],
    pub feet: [Vector3<f64>; 2],
    pub shoulders: [Vector3<f64>; 2],
    pub hips: [Vector3<f64>; 2],
}

/// Position of a limb end point in the body frame together with its joint
/// sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbKinematics {
    pub point: Vector3<f64>,
    /// `d point / d q_j` for each joint of the limb, body frame.
    pub point_jacobian: Vec<Vector3<f64>>,
    /// Joint axes in the body frame.
    pub axes: Vec<Vector3<f64>>,
}

/// End-point kinematics of a limb in the trunk frame.
pub fn limb_kinematics(model: &RobotModel, limb: Limb, q: &[f64]) -> LimbKinematics {
    let qs = &q[limb.joints()];
    let down = |l: f64| Vector3::new(0.0, 0.0, -l);
    match limb {
        Limb::Leg(side) => {
            let hip = model.hip_offset(side);
            let r0 = rot_z(qs[0]);
            let r1 = r0 * rot_x(qs[1]);
            let r2 = r1 * rot_y(qs[2]);
            let knee = hip + r2 * down(model.thigh_length);
            let r3 = r2 * rot_y(qs[3]);
            let foot = knee + r3 * down(model.shank_length);
            let pitch_axis = r1 * Vector3::y();
            let axes = vec![
                Vector3::z(),
                r0 * Vector3::x(),
                pitch_axis,
                pitch_axis,
                pitch_axis,
            ];
            let origins = [hip, hip, hip, knee, foot];
            let point_jacobian = axes
                .iter()
                .zip(origins.iter())
                .map(|(a, o)| a.cross(&(foot - o)))
                .collect();
            LimbKinematics {
                point: foot,
                point_jacobian,
                axes,
            }
        }
        Limb::Arm(side) => {
            let shoulder = model.shoulder_offset(side);
            let r0 = rot_y(qs[0]);
            let r1 = r0 * rot_x(qs[1]);
            let elbow = shoulder + r1 * down(model.upper_arm_length);
            let r2 = r1 * rot_y(qs[2]);
            let hand = elbow + r2 * down(model.lower_arm_length);
            let axes = vec![Vector3::y(), r0 * Vector3::x(), r1 * Vector3::y()];
            let origins = [shoulder, shoulder, elbow];
            let point_jacobian = axes
                .iter()
                .zip(origins.iter())
                .map(|(a, o)| a.cross(&(hand - o)))
                .collect();
            LimbKinematics {
                point: hand,
                point_jacobian,
                axes,
            }
        }
    }
}

/// World-frame points without limit checks. Used inside optimizers where
/// iterates may sit marginally outside the limits.
pub fn body_points(model: &RobotModel, base: &BasePose, q: &[f64]) -> BodyPoints {
    let rot = base.rotation();
    let world = |p: Vector3<f64>| base.position + rot * p;
    let hand = |s| world(limb_kinematics(model, Limb::Arm(s), q).point);
    let foot = |s| world(limb_kinematics(model, Limb::Leg(s), q).point);
    BodyPoints {
        hands: [hand(Side::Left), hand(Side::Right)],
        feet: [foot(Side::Left), foot(Side::Right)],
        shoulders: [
            world(model.shoulder_offset(Side::Left)),
            world(model.shoulder_offset(Side::Right)),
        ],
        hips: [
            world(model.hip_offset(Side::Left)),
            world(model.hip_offset(Side::Right)),
        ],
    }
}

/// World-frame hands, feet, shoulders and hips for the given base pose and joints.
pub fn forward_kinematics(model: &RobotModel, base: &BasePose, q: &[f64]) -> Result<BodyPoints> {
    base.check_pitch()?;
    model.check_joint_limits(q)?;
    Ok(body_points(model, base, q))
}

/// Contact Jacobian with rows in control-input order
/// `[F_h1, F_h2, F_f1, F_f2, M_f1(y,z), M_f2(y,z)]` and columns in joint order.
pub fn contact_jacobian(model: &RobotModel, base: &BasePose, q: &[f64]) -> Result<ContactJacobian> {
    base.check_pitch()?;
    model.check_joint_limits(q)?;
    Ok(contact_jacobian_unchecked(model, base, q))
}

pub fn contact_jacobian_unchecked(
    model: &RobotModel,
    base: &BasePose,
    q: &[f64],
) -> ContactJacobian {
    let rot = base.rotation();
    let mut jc = ContactJacobian::zeros();
    for side in Side::BOTH {
        let s = side.index();
        let arm = limb_kinematics(model, Limb::Arm(side), q);
        for (k, j) in Limb::Arm(side).joints().enumerate() {
            let col = rot * arm.point_jacobian[k];
            jc.fixed_view_mut::<3, 1>(3 * s, j).copy_from(&col);
        }
        let leg = limb_kinematics(model, Limb::Leg(side), q);
        for (k, j) in Limb::Leg(side).joints().enumerate() {
            let col = rot * leg.point_jacobian[k];
            jc.fixed_view_mut::<3, 1>(6 + 3 * s, j).copy_from(&col);
            let axis = rot * leg.axes[k];
            // L selects the y and z moment components.
            jc[(12 + 2 * s, j)] = axis.y;
            jc[(13 + 2 * s, j)] = axis.z;
        }
    }
    jc
}

/// Sensitivities of a world point `p = p_c + R(theta) p_body(q)` with respect
/// to the Euler angles (columns) and the limb joints.
#[derive(Debug, Clone)]
pub struct PointSensitivity {
    pub point: Vector3<f64>,
    pub d_euler: Matrix3<f64>,
    pub joints: Range<usize>,
    pub d_joints: Vec<Vector3<f64>>,
}

pub fn limb_point_sensitivity(
    model: &RobotModel,
    base: &BasePose,
    limb: Limb,
    q: &[f64],
) -> PointSensitivity {
    let kin = limb_kinematics(model, limb, q);
    fixed_point_sensitivity(base, kin.point, limb.joints(), kin.point_jacobian)
}

/// Sensitivity of a trunk-fixed point (shoulder, hip).
pub fn trunk_point_sensitivity(base: &BasePose, body_point: Vector3<f64>) -> PointSensitivity {
    fixed_point_sensitivity(base, body_point, 0..0, Vec::new())
}

fn fixed_point_sensitivity(
    base: &BasePose,
    body_point: Vector3<f64>,
    joints: Range<usize>,
    body_jac: Vec<Vector3<f64>>,
) -> PointSensitivity {
    let rot = base.rotation();
    let partials = euler_rotation_partials(&base.euler);
    let d_euler = Matrix3::from_columns(&[
        partials[0] * body_point,
        partials[1] * body_point,
        partials[2] * body_point,
    ]);
    PointSensitivity {
        point: base.position + rot * body_point,
        d_euler,
        joints,
        d_joints: body_jac.into_iter().map(|v| rot * v).collect(),
    }
}

/// Damped least-squares inverse kinematics for one limb end point.
///
/// `seed` and `bias` are full 16-vectors; only the limb's entries are used. The
/// redundant leg directions are pulled toward `bias`. Returns the 16-vector with
/// the limb entries replaced, and the final position error (m).
pub fn solve_limb_ik(
    model: &RobotModel,
    base: &BasePose,
    limb: Limb,
    target_world: &Vector3<f64>,
    seed: &[f64; NUM_JOINTS],
    bias: &[f64; NUM_JOINTS],
) -> ([f64; NUM_JOINTS], f64) {
    let rot = base.rotation();
    let target = rot.transpose() * (target_world - base.position);
    let range = limb.joints();
    let n = range.len();
    let mut q = *seed;
    for j in range.clone() {
        q[j] = q[j].clamp(model.joint_lower[j], model.joint_upper[j]);
    }
    let mut err = f64::INFINITY;
    for _ in 0..100 {
        let kin = limb_kinematics(model, limb, &q);
        let e = target - kin.point;
        err = e.norm();
        if err < 1e-10 {
            break;
        }
        let jac = nalgebra::DMatrix::from_fn(3, n, |r, c| kin.point_jacobian[c][r]);
        let damping = 1e-4 * err.min(1.0);
        let jjt = &jac * jac.transpose() + nalgebra::DMatrix::identity(3, 3) * damping;
        let Some(inv) = jjt.try_inverse() else { break };
        let pinv = jac.transpose() * inv;
        let mut dq = &pinv * nalgebra::DVector::from_column_slice(e.as_slice());
        let null = nalgebra::DMatrix::identity(n, n) - &pinv * &jac;
        let pull = nalgebra::DVector::from_fn(n, |k, _| {
            0.2 * (bias[range.start + k] - q[range.start + k])
        });
        dq += null * pull;
        let step = dq.amax();
        if step > 0.3 {
            dq *= 0.3 / step;
        }
        for (k, j) in range.clone().enumerate() {
            q[j] = (q[j] + dq[k]).clamp(model.joint_lower[j], model.joint_upper[j]);
        }
    }
    let kin = limb_kinematics(model, limb, &q);
    err = err.min((target - kin.point).norm());
    (q, err)
}
