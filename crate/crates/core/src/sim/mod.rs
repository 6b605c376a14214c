//! Simplified-dynamics plant: a single rigid body robot with ideal stance
//! contacts and a planar box sliding with stick-slip friction.

mod log;
mod runner;
mod scenario;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    euler_rate_map_inverse, moment_selection, ObjectParams, UnifiedState, GRAVITY,
};
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::math::{euler_to_rotation, rot_z};

pub use log::{log_header, write_log_csv, MpcDiagnostics, SimLogRecord, LOG_SCHEMA_VERSION};
pub use runner::{run_scenario, SimRun, SimSummary, SolveTiming};
pub use scenario::{Ablation, Scenario, PRESETS};

/// Model-mismatch knobs, in percent of the controller's values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mismatch {
    pub mass_pct: f64,
    pub friction_pct: f64,
    pub inertia_pct: f64,
}

impl Mismatch {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass_pct),
            ("friction", self.friction_pct),
            ("inertia", self.inertia_pct),
        ] {
            if !(-50.0..=100.0).contains(&v) {
                return Err(Error::Config(format!(
                    "{name} mismatch {v}% outside [-50, 100]"
                )));
            }
        }
        Ok(())
    }

    /// The plant's object: the controller's parameters with the errors applied.
    pub fn apply(&self, object: &ObjectParams) -> ObjectParams {
        let mut out = object.clone();
        out.mass *= 1.0 + self.mass_pct / 100.0;
        out.ground_friction *= 1.0 + self.friction_pct / 100.0;
        let inertia = object.inertia_body()
            * (1.0 + self.mass_pct / 100.0)
            * (1.0 + self.inertia_pct / 100.0);
        out.inertia = Some(std::array::from_fn(|r| {
            std::array::from_fn(|c| inertia[(r, c)])
        }));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceTarget {
    Object,
    Robot,
}

/// A constant force applied over `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub start: f64,
    pub duration: f64,
    pub force: [f64; 3],
    pub target: DisturbanceTarget,
    /// Application point in the object frame, relative to its CoM. A lateral
    /// force behind the CoM also yaws the object.
    #[serde(default = "Disturbance::default_lever")]
    pub lever: [f64; 3],
}

impl Disturbance {
    fn default_lever() -> [f64; 3] {
        [-0.125, 0.0, 0.0]
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Parses `"t0,dur,fx,fy,fz"` into an object disturbance.
    pub fn parse(s: &str, object_length: f64) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("disturbance '{s}': {e}")))?;
        if v.len() != 5 || !(v[1] > 0.0) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!(
                "disturbance '{s}' must be t0,dur,fx,fy,fz with dur > 0"
            )));
        }
        Ok(Self {
            start: v[0],
            duration: v[1],
            force: [v[2], v[3], v[4]],
            target: DisturbanceTarget::Object,
            lever: [-object_length / 4.0, 0.0, 0.0],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integrator step (s).
    pub dt: f64,
    /// Low-level control rate (Hz).
    pub control_rate: f64,
    pub duration: f64,
    /// Start of the window used for steady-state metrics (s).
    pub steady_start: f64,
    /// Static friction as a multiple of the kinetic coefficient.
    pub static_ratio: f64,
    pub mismatch: Mismatch,
    pub disturbances: Vec<Disturbance>,
    /// Ground friction acts at this object-frame offset from the CoM (x, y).
    pub friction_offset: [f64; 2],
    pub fall_height: f64,
    pub max_tilt: f64,
    /// How long a hand may stay off the face before the run fails (s).
    pub release_timeout: f64,
    /// Largest IK residual before a limb counts as out of reach (m).
    pub reach_tolerance: f64,
    /// How far a hand target may leave the pushed face before the run fails (m).
    pub face_tolerance: f64,
    /// Point mass carried by the swing-foot PD (kg).
    pub swing_foot_mass: f64,
    /// Viscous gain holding a hand on the face tangentially, capped by the hand cone (N s/m).
    pub hand_damping: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            control_rate: 500.0,
            duration: 10.0,
            steady_start: 5.0,
            static_ratio: 1.1,
            mismatch: Mismatch::default(),
            disturbances: Vec::new(),
            friction_offset: [0.0, 0.0],
            fall_height: 0.25,
            max_tilt: 1.0,
            release_timeout: 1.0,
            reach_tolerance: 0.01,
            face_tolerance: 0.03,
            swing_foot_mass: 0.5,
            hand_damping: 300.0,
        }
    }
}

impl SimConfig {
    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Plant steps per control tick.
    pub fn substeps(&self) -> usize {
        (self.control_period() / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dt,
            self.control_rate,
            self.duration,
            self.release_timeout,
            self.reach_tolerance,
            self.face_tolerance,
            self.swing_foot_mass,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "sim step, rate, duration, timeouts and masses must be positive".into(),
            ));
        }
        if !(self.hand_damping >= 0.0) {
            return Err(Error::Config("hand damping must be nonnegative".into()));
        }
        if self.dt >= self.control_period() {
            return Err(Error::Config(
                "integrator step must be smaller than the control period".into(),
            ));
        }
        let ratio = self.control_period() / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(
                "control period must be a whole number of integrator steps".into(),
            ));
        }
        if !(self.static_ratio >= 1.0) {
            return Err(Error::Config(
                "static friction ratio must be at least 1".into(),
            ));
        }
        self.mismatch.validate()?;
        for d in &self.disturbances {
            if !(d.duration > 0.0)
                || d.force
                    .iter()
                    .chain(&d.lever)
                    .chain([&d.start])
                    .any(|v| !v.is_finite())
            {
                return Err(Error::Config(
                    "disturbances need a positive duration and finite values".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Physical parameters the plant integrates with.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub robot_mass: f64,
    pub robot_inertia: Matrix3<f64>,
    pub object: ObjectParams,
    pub static_ratio: f64,
    pub friction_offset: Vector2<f64>,
}

impl PlantParams {
    pub fn new(model: &RobotModel, object: &ObjectParams, cfg: &SimConfig) -> Self {
        Self {
            robot_mass: model.mass,
            robot_inertia: model.inertia_body(),
            object: cfg.mismatch.apply(object),
            static_ratio: cfg.static_ratio,
            friction_offset: Vector2::from(cfg.friction_offset),
        }
    }
}

/// Wrenches acting over one integrator step. Hand forces act on the object
/// and react on the trunk; swing feet carry no force.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantInput {
    pub hand_forces: [Vector3<f64>; 2],
    pub hands: [Vector3<f64>; 2],
    /// Outward normal of the pushed face. A zero normal leaves the hand
    /// force as given; otherwise contact friction is added tangentially.
    pub hand_normal: Vector3<f64>,
    pub hand_mu: f64,
    pub hand_damping: f64,
    pub foot_forces: [Vector3<f64>; 2],
    pub foot_moments: [Vector2<f64>; 2],
    pub feet: [Vector3<f64>; 2],
    pub stance: [bool; 2],
    pub object_disturbance: Vector3<f64>,
    /// World point where the object disturbance acts.
    pub object_disturbance_point: Vector3<f64>,
    pub robot_disturbance: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub x: UnifiedState,
    /// The object is held by static friction.
    pub stuck: bool,
    /// Hand forces of the last step, contact friction included.
    pub hand_forces: [Vector3<f64>; 2],
    /// The hand's tangential force hit the friction cone on the last step.
    pub hand_slipping: [bool; 2],
}

impl PlantState {
    pub fn at_rest(x: UnifiedState) -> Self {
        Self {
            x,
            stuck: x.object_velocity.xy().norm() == 0.0 && x.object_omega.z == 0.0,
            hand_forces: [Vector3::zeros(); 2],
            hand_slipping: [false; 2],
        }
    }
}

/// Adds tangential contact friction to the commanded hand forces: a viscous
/// term resisting relative sliding, with the total kept inside the cone.
fn hand_contact_forces(x: &UnifiedState, u: &PlantInput) -> ([Vector3<f64>; 2], [bool; 2]) {
    let n = u.hand_normal;
    if n.norm() == 0.0 {
        return (u.hand_forces, [false; 2]);
    }
    let mut forces = [Vector3::zeros(); 2];
    let mut slipping = [false; 2];
    for k in 0..2 {
        let f = u.hand_forces[k];
        let push = n.dot(&f);
        if push <= 0.0 {
            continue;
        }
        let r_o = u.hands[k] - x.object_position;
        let r_c = u.hands[k] - x.robot_position;
        let v_rel = x.object_velocity + x.object_omega.cross(&r_o)
            - x.robot_velocity
            - x.robot_omega.cross(&r_c);
        let mut tangential = (f - n * push) - (v_rel - n * n.dot(&v_rel)) * u.hand_damping;
        let limit = u.hand_mu * push;
        if tangential.norm() > limit {
            tangential *= limit / tangential.norm();
            slipping[k] = true;
        }
        forces[k] = n * push + tangential;
    }
    (forces, slipping)
}

/// Advances the plant by `dt` with semi-implicit Euler.
pub fn step_plant(
    s: &PlantState,
    u: &PlantInput,
    p: &PlantParams,
    dt: f64,
    t: f64,
) -> Result<PlantState> {
    let mut x = s.x;
    let (hand_forces, hand_slipping) = hand_contact_forces(&x, u);

    // robot trunk
    let mut force = Vector3::new(0.0, 0.0, -GRAVITY * p.robot_mass) + u.robot_disturbance;
    let mut moment = Vector3::zeros();
    let sel = moment_selection();
    for m in 0..2 {
        if u.stance[m] {
            force += u.foot_forces[m];
            moment +=
                (u.feet[m] - x.robot_position).cross(&u.foot_forces[m]) + sel * u.foot_moments[m];
        }
    }
    for n in 0..2 {
        force -= hand_forces[n];
        moment -= (u.hands[n] - x.robot_position).cross(&hand_forces[n]);
    }
    let rot = euler_to_rotation(&x.robot_euler);
    let inertia = rot * p.robot_inertia * rot.transpose();
    let omega = x.robot_omega;
    let inv = inertia.try_inverse().ok_or_else(|| Error::Integration {
        time: t,
        reason: "singular robot inertia".into(),
    })?;
    let alpha = inv * (moment - omega.cross(&(inertia * omega)));
    x.robot_velocity += force / p.robot_mass * dt;
    x.robot_position += x.robot_velocity * dt;
    x.robot_omega += alpha * dt;
    let rate = euler_rate_map_inverse(&x.robot_euler).map_err(|e| Error::Integration {
        time: t,
        reason: e.to_string(),
    })?;
    x.robot_euler += rate * x.robot_omega * dt;

    // object: planar, with friction at an offset point
    let obj = &p.object;
    let yaw = x.object_euler.z;
    let mut applied = u.object_disturbance;
    let mut applied_moment = (u.object_disturbance_point - x.object_position)
        .cross(&u.object_disturbance)
        .z;
    for n in 0..2 {
        applied += hand_forces[n];
        applied_moment += (u.hands[n] - x.object_position).cross(&hand_forces[n]).z;
    }
    let applied_xy = applied.xy();
    let weight = obj.mass * GRAVITY;
    let static_limit = p.static_ratio * obj.ground_friction * weight;
    let mut stuck = s.stuck;
    if stuck && applied_xy.norm() <= static_limit {
        x.object_velocity = Vector3::zeros();
        x.object_omega = Vector3::zeros();
    } else {
        let r_f = rot_z(yaw) * Vector3::new(p.friction_offset.x, p.friction_offset.y, 0.0);
        let v_f = contact_velocity(&x, &r_f);
        let dir = if v_f.norm() > 0.0 {
            -v_f / v_f.norm()
        } else if applied_xy.norm() > 0.0 {
            -applied_xy / applied_xy.norm()
        } else {
            Vector2::zeros()
        };
        let friction = dir * (obj.ground_friction * weight);
        let friction_moment = r_f.x * friction.y - r_f.y * friction.x;
        let izz = obj.inertia_body()[(2, 2)];
        let accel = (applied_xy + friction) / obj.mass;
        let yaw_accel = (applied_moment + friction_moment) / izz;
        x.object_velocity.x += accel.x * dt;
        x.object_velocity.y += accel.y * dt;
        x.object_omega.z += yaw_accel * dt;
        stuck = false;
        // friction cannot reverse the motion: a sign change at the friction
        // point under a sub-static push ends in sticking
        let v_new = contact_velocity(&x, &r_f);
        if v_f.norm() > 0.0 && v_new.dot(&v_f) <= 0.0 && applied_xy.norm() <= static_limit {
            x.object_velocity = Vector3::zeros();
            x.object_omega = Vector3::zeros();
            stuck = true;
        }
    }
    x.object_velocity.z = 0.0;
    x.object_omega.x = 0.0;
    x.object_omega.y = 0.0;
    x.object_position += x.object_velocity * dt;
    x.object_euler.z += x.object_omega.z * dt;

    if !x.is_finite() {
        return Err(Error::Integration {
            time: t,
            reason: "non-finite state".into(),
        });
    }
    Ok(PlantState {
        x,
        stuck,
        hand_forces,
        hand_slipping,
    })
}

/// Planar velocity of the object point at world offset `r` from its CoM.
fn contact_velocity(x: &UnifiedState, r: &Vector3<f64>) -> Vector2<f64> {
    let w = x.object_omega.z;
    Vector2::new(x.object_velocity.x - w * r.y, x.object_velocity.y + w * r.x)
}
