//! Humanoid box pushing: contact-pose optimization, a unified robot/object
//! MPC, whole-body force control and a simplified-dynamics plant.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod math;
pub mod mpc;
pub mod pose_opt;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
