use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Disturbance, DisturbanceTarget, SimConfig};
use crate::control::{ControllerGains, Gait};
use crate::dynamics::ObjectParams;
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::mpc::{CommandProfile, MpcConfig};
use crate::pose_opt::{PoseProblemInputs, DEFAULT_GAP, DEFAULT_MU_FOOT, DEFAULT_MU_HAND};

/// Everything one simulated push needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub object: ObjectParams,
    /// Distance from the robot origin to the object's near face (m).
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_mu_foot")]
    pub mu_foot: f64,
    #[serde(default = "default_mu_hand")]
    pub mu_hand: f64,
    /// Use the optimized pose; otherwise a fixed nominal pose.
    #[serde(default = "yes")]
    pub pose_optimization: bool,
    #[serde(default)]
    pub command: CommandProfile,
    #[serde(default)]
    pub gait: Gait,
    #[serde(default)]
    pub gains: ControllerGains,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_gap() -> f64 {
    DEFAULT_GAP
}
fn default_mu_foot() -> f64 {
    DEFAULT_MU_FOOT
}
fn default_mu_hand() -> f64 {
    DEFAULT_MU_HAND
}
fn yes() -> bool {
    true
}

/// The four comparison variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Nominal pose, locomotion MPC without the object.
    LocomotionOnly,
    /// Nominal pose, full loco-manipulation MPC.
    LocoManipulationOnly,
    /// Optimized pose, locomotion MPC without the object.
    PoseLocomotion,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::LocomotionOnly,
        Ablation::LocoManipulationOnly,
        Ablation::PoseLocomotion,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::LocomotionOnly => "locomotion_mpc",
            Ablation::LocoManipulationOnly => "loco_manipulation_mpc",
            Ablation::PoseLocomotion => "pose_locomotion_mpc",
            Ablation::Full => "full",
        }
    }

    pub fn apply(self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        s.name = format!("{}_{}", base.name, self.name());
        s.pose_optimization = matches!(self, Ablation::PoseLocomotion | Ablation::Full);
        s.mpc.object_model = matches!(self, Ablation::LocoManipulationOnly | Ablation::Full);
        s
    }
}

pub const PRESETS: [&str; 6] = ["nominal", "heavy", "disturb", "turn3d", "compare", "stand"];

impl Scenario {
    fn base(name: &str, object: ObjectParams) -> Self {
        let command = CommandProfile {
            ramp_time: 1.0,
            ..Default::default()
        };
        Self {
            name: name.into(),
            object,
            gap: DEFAULT_GAP,
            mu_foot: DEFAULT_MU_FOOT,
            mu_hand: DEFAULT_MU_HAND,
            pose_optimization: true,
            command,
            gait: Gait::default(),
            gains: ControllerGains::default(),
            mpc: MpcConfig::default(),
            sim: SimConfig::default(),
        }
    }

    /// Built-in experiment setups.
    pub fn preset(name: &str) -> Result<Self> {
        let cube = ObjectParams::cube(0.5, 10.0, 0.5);
        let s = match name {
            "nominal" => Self::base(name, cube),
            "heavy" => Self::base(
                name,
                ObjectParams {
                    length: 1.0,
                    width: 1.0,
                    height: 1.0,
                    mass: 20.0,
                    ground_friction: 0.3,
                    inertia: None,
                },
            ),
            "disturb" => {
                let mut s = Self::base(name, cube);
                s.sim.disturbances.push(Disturbance {
                    start: 4.0,
                    duration: 0.3,
                    force: [0.0, 120.0, 0.0],
                    target: DisturbanceTarget::Object,
                    lever: [-0.125, 0.0, 0.0],
                });
                s
            }
            "turn3d" => {
                let mut s = Self::base(name, ObjectParams::cube(0.5, 10.0, 0.4));
                s.command.turn_angle = std::f64::consts::FRAC_PI_2;
                s.command.turn_start = 1.0;
                s.command.turn_duration = 6.0;
                s
            }
            "compare" => {
                let mut s = Self::base(name, cube);
                // uneven ground contact: friction acts off the centre line
                s.sim.friction_offset = [0.0, 0.05];
                s
            }
            "stand" => {
                let mut s = Self::base(name, cube);
                s.command.speed = 0.0;
                s.gait.stand = true;
                s.sim.duration = 5.0;
                s.sim.steady_start = 2.5;
                s
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(s)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        self.gait.validate()?;
        self.gains.validate()?;
        self.mpc.validate()?;
        self.sim.validate()?;
        if !(self.gap > 0.0) {
            return Err(Error::Config("gap must be positive".into()));
        }
        if !(self.command.turn_duration > 0.0)
            || !self.command.speed.is_finite()
            || !(self.command.ramp_time >= 0.0)
        {
            return Err(Error::Config(
                "turn duration must be positive, ramp time nonnegative and speed finite".into(),
            ));
        }
        // the MPC re-solves on a whole number of control ticks
        let ticks = self.mpc.dt * self.sim.control_rate;
        if (ticks - ticks.round()).abs() > 1e-9 || ticks < 1.0 {
            return Err(Error::Config(
                "MPC dt must be a whole number of control periods".into(),
            ));
        }
        Ok(())
    }

    pub fn pose_inputs(&self, model: &RobotModel) -> PoseProblemInputs {
        let mut p = PoseProblemInputs::in_front_of(
            model,
            self.object.clone(),
            self.gap,
            self.mu_foot,
            self.mu_hand,
        );
        p.object_yaw = self.command.initial_yaw;
        p
    }
}
