//! Low-level control: gait timing, swing-foot placement, Cartesian PD for the
//! swing foot and hands, and the Jacobian-transpose torque map.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, UnifiedState};
use crate::error::{Error, Result};
use crate::kinematics::{ContactJacobian, RobotModel, NUM_JOINTS};
use crate::math::rot_z;
use crate::mpc::GaitSchedule;
use crate::pose_opt::PoseSolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub foot_kp: [f64; 3],
    pub foot_kd: [f64; 3],
    pub hand_kp: [f64; 3],
    pub hand_kd: [f64; 3],
    /// Velocity-feedback scaling of the foot placement (s).
    pub k: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            foot_kp: [600.0; 3],
            foot_kd: [20.0; 3],
            hand_kp: [400.0; 3],
            hand_kd: [10.0; 3],
            k: 0.03,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .foot_kp
            .iter()
            .chain(&self.foot_kd)
            .chain(&self.hand_kp)
            .chain(&self.hand_kd);
        if all
            .chain(std::iter::once(&self.k))
            .any(|g| !(*g >= 0.0) || !g.is_finite())
        {
            return Err(Error::Config("controller gains must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Walking gait: each period holds a double-support phase followed by a left
/// swing, then a double-support phase followed by a right swing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gait {
    pub period: f64,
    /// Fraction of the period spent in double support (split over two phases).
    pub double_support: f64,
    pub swing_height: f64,
    /// Both feet stay down for the whole run.
    pub stand: bool,
}

impl Default for Gait {
    fn default() -> Self {
        Self {
            period: 0.4,
            double_support: 0.2,
            swing_height: 0.05,
            stand: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitPhase {
    /// `[left, right]` stance flags.
    pub stance: [bool; 2],
    /// Progress through the current swing in [0, 1] for a swinging leg.
    pub swing: [Option<f64>; 2],
}

impl Gait {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0)
            || !(0.0..1.0).contains(&self.double_support)
            || !(self.swing_height >= 0.0)
        {
            return Err(Error::Config(
                "gait needs period > 0, double support in [0, 1), swing height >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn swing_duration(&self) -> f64 {
        0.5 * self.period * (1.0 - self.double_support)
    }

    pub fn phase(&self, t: f64) -> GaitPhase {
        let both = GaitPhase {
            stance: [true, true],
            swing: [None, None],
        };
        if self.stand {
            return both;
        }
        let half = 0.5 * self.period;
        let ds = half * self.double_support;
        let tau = t.rem_euclid(self.period);
        let (leg, local) = if tau < half {
            (0, tau)
        } else {
            (1, tau - half)
        };
        if local < ds {
            return both;
        }
        let s = ((local - ds) / (half - ds)).min(1.0);
        let mut phase = both;
        phase.stance[leg] = false;
        phase.swing[leg] = Some(s);
        phase
    }

    /// Contact flags sampled at the start of each horizon step.
    pub fn schedule(&self, t: f64, horizon: usize, dt: f64) -> GaitSchedule {
        // sample just inside the interval so boundary instants round forward
        let stance = (0..horizon)
            .map(|i| self.phase(t + i as f64 * dt + 1e-9).stance)
            .collect();
        GaitSchedule {
            stance,
            dt: vec![dt; horizon],
        }
    }
}

/// Swing-foot target from the CoM state and the pose solution's foot offset,
/// rotated with the trunk heading:
/// `p_c + R_z (p_f_opt - p_c_opt) + v dt_gait / 2 + k (v - v_des)`, on the ground.
pub fn foot_placement(
    x: &UnifiedState,
    pose: &PoseSolution,
    leg: usize,
    v_des: &Vector3<f64>,
    period: f64,
    gains: &ControllerGains,
) -> Vector3<f64> {
    let offset = rot_z(x.robot_euler.z - pose.euler.z) * (pose.feet[leg] - pose.com);
    let v = x.robot_velocity;
    let mut p = x.robot_position + offset + v * (period / 2.0) + (v - v_des) * gains.k;
    p.z = 0.0;
    p
}

/// Half-sine swing from `start` to `target`; returns position and velocity.
pub fn swing_trajectory(
    start: &Vector3<f64>,
    target: &Vector3<f64>,
    s: f64,
    height: f64,
    duration: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let s = s.clamp(0.0, 1.0);
    // cosine blend: zero horizontal velocity at lift-off and touchdown
    let blend = 0.5 * (1.0 - (PI * s).cos());
    let dblend = 0.5 * PI * (PI * s).sin() / duration;
    let mut p = start + (target - start) * blend;
    let mut v = (target - start) * dblend;
    p.z = start.z + (target.z - start.z) * blend + height * (PI * s).sin();
    v.z = (target.z - start.z) * dblend + height * PI * (PI * s).cos() / duration;
    (p, v)
}

/// `K_P (p_des - p) + K_D (v_des - v)` with diagonal gains.
pub fn cartesian_pd(
    p_des: &Vector3<f64>,
    v_des: &Vector3<f64>,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    kp: &[f64; 3],
    kd: &[f64; 3],
) -> Vector3<f64> {
    Vector3::from_fn(|i, _| kp[i] * (p_des[i] - p[i]) + kd[i] * (v_des[i] - v[i]))
}

pub fn cartesian_pd_foot(
    p_des: &Vector3<f64>,
    v_des: &Vector3<f64>,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    gains: &ControllerGains,
) -> Vector3<f64> {
    cartesian_pd(p_des, v_des, p, v, &gains.foot_kp, &gains.foot_kd)
}

/// Hand PD toward the optimal contact point with zero target velocity.
pub fn cartesian_pd_hand(
    p_opt: &Vector3<f64>,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    gains: &ControllerGains,
) -> Vector3<f64> {
    cartesian_pd(
        p_opt,
        &Vector3::zeros(),
        p,
        v,
        &gains.hand_kp,
        &gains.hand_kd,
    )
}

/// PD forces in input layout: hands, then feet; moments carry no PD term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PdForces {
    pub hands: [Vector3<f64>; 2],
    pub feet: [Vector3<f64>; 2],
}

impl PdForces {
    pub fn to_input(&self) -> ControlInput {
        ControlInput {
            hand_forces: self.hands,
            foot_forces: self.feet,
            foot_moments: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueCommand {
    /// Torques before clamping.
    pub raw: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub saturated: bool,
}

/// `tau = J_c^T (u + u_pd)`, clamped to the model's torque limits.
pub fn aggregate_and_map(
    u: &ControlInput,
    pd: &PdForces,
    jacobian: &ContactJacobian,
    model: &RobotModel,
) -> TorqueCommand {
    let total = u.to_vector() + pd.to_input().to_vector();
    let raw_v = jacobian.transpose() * total;
    let mut raw = [0.0; NUM_JOINTS];
    let mut tau = [0.0; NUM_JOINTS];
    let mut saturated = false;
    for j in 0..NUM_JOINTS {
        raw[j] = raw_v[j];
        let lim = model.tau_max[j];
        tau[j] = raw[j].clamp(-lim, lim);
        saturated |= tau[j] != raw[j];
    }
    TorqueCommand {
        raw,
        tau,
        saturated,
    }
}

/// Sum of MPC and PD inputs, the wrench the plant receives.
pub fn total_input(u: &ControlInput, pd: &PdForces) -> ControlInput {
    let mut out = *u;
    for n in 0..2 {
        out.hand_forces[n] += pd.hands[n];
        out.foot_forces[n] += pd.feet[n];
    }
    out
}
