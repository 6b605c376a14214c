use std::path::Path;

use crate::dynamics::{ControlInput, UnifiedState, INPUT_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::NUM_JOINTS;

/// Bumped whenever the column list changes.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLogRecord {
    pub t: f64,
    pub state: UnifiedState,
    /// Wrench the plant received (hand forces after the no-pull rule, feet
    /// masked by the actual contact state).
    pub applied: ControlInput,
    /// MPC input held over this tick.
    pub commanded: ControlInput,
    /// Clamped joint torques.
    pub tau: [f64; NUM_JOINTS],
    pub tau_saturated: bool,
    /// Smallest `mu F_n - |F_t|` over stance feet, using the aggregated input.
    pub foot_cone_margin: f64,
    /// Smallest `mu F_n - |F_t|` over engaged hands.
    pub hand_cone_margin: f64,
    /// Smallest `tau_max - |tau_raw|` over joints.
    pub torque_margin: f64,
    pub stance: [bool; 2],
    pub hands_engaged: [bool; 2],
    /// Object yaw minus the commanded yaw.
    pub yaw_error: f64,
    pub mpc: Option<MpcDiagnostics>,
    pub events: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcDiagnostics {
    /// Wall-clock time; kept out of the CSV so logs stay reproducible.
    pub solve_ms: f64,
    pub iterations: usize,
    pub cost: f64,
    pub kkt: f64,
    pub violation: f64,
    pub active: usize,
    pub backed_off: bool,
}

const STATE_NAMES: [&str; 9] = [
    "rc_euler", "rc_pos", "rc_omega", "rc_vel", "ro_euler", "ro_pos", "ro_omega", "ro_vel", "g",
];
const INPUT_NAMES: [&str; 6] = ["fh1", "fh2", "ff1", "ff2", "mf1", "mf2"];

pub fn log_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for block in STATE_NAMES {
        for axis in ["x", "y", "z"] {
            h.push(format!("{block}_{axis}"));
        }
    }
    for prefix in ["u", "cmd"] {
        for (k, block) in INPUT_NAMES.iter().enumerate() {
            let axes: &[&str] = if k < 4 { &["x", "y", "z"] } else { &["y", "z"] };
            for axis in axes {
                h.push(format!("{prefix}_{block}_{axis}"));
            }
        }
    }
    for j in 0..NUM_JOINTS {
        h.push(format!("tau_{j}"));
    }
    for name in [
        "tau_saturated",
        "foot_cone_margin",
        "hand_cone_margin",
        "torque_margin",
        "stance_l",
        "stance_r",
        "hand_l",
        "hand_r",
        "yaw_error",
        "mpc_iterations",
        "mpc_cost",
        "mpc_kkt",
        "mpc_violation",
        "mpc_active",
        "mpc_backoff",
        "events",
    ] {
        h.push(name.to_string());
    }
    debug_assert_eq!(h.len(), 1 + STATE_DIM + 2 * INPUT_DIM + NUM_JOINTS + 16);
    h
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

impl SimLogRecord {
    pub fn to_row(&self) -> Vec<String> {
        let mut r = vec![self.t.to_string()];
        r.extend(self.state.to_vector().iter().map(|v| v.to_string()));
        r.extend(self.applied.to_vector().iter().map(|v| v.to_string()));
        r.extend(self.commanded.to_vector().iter().map(|v| v.to_string()));
        r.extend(self.tau.iter().map(|v| v.to_string()));
        r.push(flag(self.tau_saturated));
        r.push(self.foot_cone_margin.to_string());
        r.push(self.hand_cone_margin.to_string());
        r.push(self.torque_margin.to_string());
        r.extend(
            self.stance
                .iter()
                .chain(&self.hands_engaged)
                .map(|b| flag(*b)),
        );
        r.push(self.yaw_error.to_string());
        match &self.mpc {
            Some(m) => {
                r.push(m.iterations.to_string());
                r.push(m.cost.to_string());
                r.push(m.kkt.to_string());
                r.push(m.violation.to_string());
                r.push(m.active.to_string());
                r.push(flag(m.backed_off));
            }
            None => r.extend(std::iter::repeat_n(String::new(), 6)),
        }
        r.push(self.events.join(";"));
        r
    }
}

pub fn write_log_csv(path: impl AsRef<Path>, log: &[SimLogRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(log_header()).map_err(io)?;
    for rec in log {
        w.write_record(rec.to_row()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
