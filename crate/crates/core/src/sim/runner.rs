use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::log::{MpcDiagnostics, SimLogRecord};
use super::{step_plant, DisturbanceTarget, PlantInput, PlantParams, PlantState, Scenario};
use crate::control::{
    aggregate_and_map, cartesian_pd_foot, cartesian_pd_hand, foot_placement, swing_trajectory,
    PdForces,
};
use crate::dynamics::{ControlInput, UnifiedState, GRAVITY};
use crate::error::{Error, Result};
use crate::kinematics::{
    body_points, contact_jacobian_unchecked, solve_limb_ik, BasePose, Limb, RobotModel, Side,
};
use crate::math::rot_z;
use crate::mpc::{build_reference, constraint_violation, solve_mpc_step, MpcContext};
use crate::pose_opt::{nominal_pose, solve_pose, PoseSolution};

/// Yaw error below which the object counts as recovered (rad).
pub const RECOVERY_YAW: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: String,
    pub success: bool,
    pub failure: Option<String>,
    /// Simulated time reached (s).
    pub end_time: f64,
    pub pose_optimized: bool,
    pub object_model: bool,
    /// Mean |v - v_des| of the robot CoM along the commanded heading over the steady window.
    pub steady_velocity_error: f64,
    /// Same for the object.
    pub steady_object_velocity_error: f64,
    pub max_object_yaw: f64,
    pub max_yaw_error: f64,
    pub final_yaw_error: f64,
    /// Largest commanded (pre-clamp) joint torque magnitude.
    pub max_tau: f64,
    /// Largest `|tau_raw| - tau_max` over joints and ticks; nonpositive when within limits.
    pub max_tau_excess: f64,
    pub saturation_ticks: usize,
    /// Time from the end of the last object disturbance until the yaw error
    /// stays below the recovery threshold; absent if it never settles.
    pub recovery_time: Option<f64>,
    /// Object-frame pushing force of the MPC's left/right hand during disturbances.
    pub impulse_left_min: Option<f64>,
    pub impulse_right_max: Option<f64>,
    pub reference_hand_force: f64,
    pub mpc_solves: usize,
    pub mpc_backoffs: usize,
    pub mpc_max_kkt: f64,
    pub mpc_max_violation: f64,
    pub tip_risk_ticks: usize,
    pub foot_cone_ticks: usize,
    pub hand_slip_ticks: usize,
}

impl SimSummary {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub log: Vec<SimLogRecord>,
    pub summary: SimSummary,
    pub pose: PoseSolution,
    pub timing: SolveTiming,
}

/// Wall-clock MPC solve times. Kept apart from the summary so that summaries
/// of repeated runs compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveTiming {
    pub mpc_mean_ms: f64,
    pub mpc_max_ms: f64,
}

/// Running statistics gathered inside the loop.
#[derive(Default)]
struct Stats {
    solves: usize,
    backoffs: usize,
    total_ms: f64,
    max_ms: f64,
    max_kkt: f64,
    max_violation: f64,
    max_tau: f64,
    max_excess: f64,
    saturation: usize,
    tip: usize,
    foot_cone: usize,
    slip: usize,
    left_min: Option<f64>,
    right_max: Option<f64>,
}

/// Plays one scenario: pose, then the control loop at `sim.control_rate` with
/// MPC re-solves every `mpc.dt` and at contact changes, and the plant at `sim.dt`.
pub fn run_scenario(model: &RobotModel, sc: &Scenario) -> Result<SimRun> {
    sc.validate()?;
    model.validate()?;
    let inputs = sc.pose_inputs(model);
    let pose = if sc.pose_optimization {
        solve_pose(&inputs, model)?
    } else {
        nominal_pose(&inputs, model)?
    };
    let mut cfg = sc.mpc.clone();
    cfg.mu_foot = sc.mu_foot;
    cfg.mu_hand = sc.mu_hand;
    let sim = &sc.sim;
    let plant = PlantParams::new(model, &sc.object, sim);
    let dc = sim.control_period();
    let substeps = sim.substeps();
    let mpc_every = (cfg.dt * sim.control_rate).round() as usize;
    let ticks = (sim.duration / dc).round() as usize;
    let obj = &sc.object;
    let gains = &sc.gains;

    let yaw0 = sc.command.initial_yaw;
    let mut x0 = UnifiedState::default();
    x0.robot_euler = Vector3::new(pose.euler.x, pose.euler.y, pose.euler.z + yaw0);
    x0.robot_position = pose.to_world(&pose.com);
    x0.object_position = pose.object_position;
    x0.object_euler.z = yaw0;
    x0.gravity = Vector3::new(0.0, 0.0, -GRAVITY);
    let mut state = PlantState::at_rest(x0);

    let mut feet = pose.feet.map(|f| {
        let mut w = pose.to_world(&f);
        w.z = 0.0;
        w
    });
    let mut swing_start = feet;
    let mut swing_pos = feet;
    let mut swing_vel = [Vector3::zeros(); 2];
    let mut q = pose.joints;
    let mut stance_prev = [true, true];
    let mut u_mpc = ControlInput::default();
    let engaged = [true, true];
    let mut pull_timer = [0.0; 2];
    let mut stats = Stats {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut log = Vec::with_capacity(ticks);
    let mut failure: Option<String> = None;
    let mut end_time = 0.0;

    'run: for k in 0..ticks {
        let t = k as f64 * dc;
        let x = state.x;
        end_time = t;
        let mut events = Vec::new();

        // gait bookkeeping
        let phase = sc.gait.phase(t);
        let stance = phase.stance;
        for m in 0..2 {
            if stance_prev[m] && !stance[m] {
                swing_start[m] = feet[m];
                swing_pos[m] = feet[m];
                swing_vel[m] = Vector3::zeros();
            } else if !stance_prev[m] && stance[m] {
                feet[m] = Vector3::new(swing_pos[m].x, swing_pos[m].y, 0.0);
            }
        }
        let contact_changed = stance != stance_prev;
        stance_prev = stance;

        // hands: robot-relative targets, projected onto the near face
        let ro = rot_z(x.object_euler.z);
        let normal = ro * Vector3::x();
        let trunk = rot_z(x.robot_euler.z - pose.euler.z);
        let mut hand_target = [Vector3::zeros(); 2];
        let mut contact = [Vector3::zeros(); 2];
        for n in 0..2 {
            hand_target[n] = x.robot_position + trunk * (pose.hands[n] - pose.com);
            let mut local = ro.transpose() * (hand_target[n] - x.object_position);
            let (half_w, half_h) = (obj.width / 2.0, obj.height / 2.0);
            if local.y.abs() > half_w + sim.face_tolerance
                || local.z.abs() > half_h + sim.face_tolerance
            {
                failure = Some(format!("hand slipped off the face ({})", side_name(n)));
                break 'run;
            }
            local = Vector3::new(
                -obj.length / 2.0,
                local.y.clamp(-half_w, half_w),
                local.z.clamp(-half_h, half_h),
            );
            contact[n] = x.object_position + ro * local;
        }

        // swing feet
        let v_des = sc.command.velocity_at(t);
        let mut pd_feet = [Vector3::zeros(); 2];
        for m in 0..2 {
            if let Some(s) = phase.swing[m] {
                let target = foot_placement(&x, &pose, m, &v_des, sc.gait.period, gains);
                let (p, v) = swing_trajectory(
                    &swing_start[m],
                    &target,
                    s,
                    sc.gait.swing_height,
                    sc.gait.swing_duration(),
                );
                pd_feet[m] = cartesian_pd_foot(&p, &v, &swing_pos[m], &swing_vel[m], gains);
            }
        }
        let foot_pts = [0, 1].map(|m| if stance[m] { feet[m] } else { swing_pos[m] });

        // joint angles; an arm short of the face just loses contact
        let base = BasePose::new(x.robot_position, x.robot_euler);
        let mut reaching = [true; 2];
        for (limb, target) in [
            (Limb::Arm(Side::Left), contact[0]),
            (Limb::Arm(Side::Right), contact[1]),
            (Limb::Leg(Side::Left), foot_pts[0]),
            (Limb::Leg(Side::Right), foot_pts[1]),
        ] {
            let (sol, err) = solve_limb_ik(model, &base, limb, &target, &q, &pose.joints);
            q = sol;
            if err > sim.reach_tolerance {
                match limb {
                    Limb::Arm(side) => reaching[side.index()] = false,
                    Limb::Leg(side) => {
                        failure = Some(format!("out of reach ({} leg)", side_name(side.index())));
                        break 'run;
                    }
                }
            }
        }
        let jc = contact_jacobian_unchecked(model, &base, &q);
        let mut points = body_points(model, &base, &q);
        points.hands = contact;
        points.feet = foot_pts;

        // MPC
        let mut diag = None;
        if k % mpc_every == 0 || contact_changed {
            let mut sched = sc.gait.schedule(t, cfg.horizon, cfg.dt);
            sched.stance[0] = stance;
            let reference = build_reference(&sc.command, t, &pose, &x, &sched, cfg.object_model);
            let ctx = MpcContext {
                model,
                object: obj,
                state: &x,
                points: &points,
                jacobian: &jc,
                hands_engaged: engaged,
            };
            match solve_mpc_step(&ctx, &reference, &sched, &cfg) {
                Ok(sol) => {
                    u_mpc = sol.u0;
                    let violation = constraint_violation(
                        &sol.u0,
                        stance,
                        engaged,
                        x.object_euler.z,
                        &jc,
                        model,
                        &cfg,
                    );
                    let d = MpcDiagnostics {
                        solve_ms: sol.report.solve_time_ms,
                        iterations: sol.report.iterations,
                        cost: sol.cost,
                        kkt: sol.kkt.max(),
                        violation,
                        active: sol.active_inequalities,
                        backed_off: sol.backed_off,
                    };
                    stats.solves += 1;
                    stats.backoffs += usize::from(d.backed_off);
                    stats.total_ms += d.solve_ms;
                    stats.max_ms = stats.max_ms.max(d.solve_ms);
                    stats.max_kkt = stats.max_kkt.max(d.kkt);
                    stats.max_violation = stats.max_violation.max(violation);
                    events.push("mpc");
                    if d.backed_off {
                        events.push("mpc_backoff");
                    }
                    if sim
                        .disturbances
                        .iter()
                        .any(|dist| dist.target == DisturbanceTarget::Object && dist.active(t))
                    {
                        let left = (ro.transpose() * u_mpc.hand_forces[0]).x;
                        let right = (ro.transpose() * u_mpc.hand_forces[1]).x;
                        stats.left_min = Some(stats.left_min.map_or(left, |v| v.min(left)));
                        stats.right_max = Some(stats.right_max.map_or(right, |v| v.max(right)));
                    }
                    diag = Some(d);
                }
                Err(e) => {
                    failure = Some(format!("controller infeasible: {e}"));
                    break 'run;
                }
            }
        }

        // hand forces: MPC plus PD along the face normal; hands cannot pull
        let mut pd_hands = [Vector3::zeros(); 2];
        let mut applied = ControlInput::default();
        let mut hand_margin = f64::INFINITY;
        for n in 0..2 {
            if !engaged[n] {
                continue;
            }
            let r_o = contact[n] - x.object_position;
            let r_c = contact[n] - x.robot_position;
            let v_rel = x.object_velocity + x.object_omega.cross(&r_o)
                - x.robot_velocity
                - x.robot_omega.cross(&r_c);
            let pd = cartesian_pd_hand(&hand_target[n], &contact[n], &v_rel, gains);
            pd_hands[n] = normal * normal.dot(&pd);
            let total = u_mpc.hand_forces[n] + pd_hands[n];
            let push = normal.dot(&total);
            let margin = sc.mu_hand * push - (total - normal * push).norm();
            hand_margin = hand_margin.min(margin);
            if push <= 0.0 || !reaching[n] {
                pull_timer[n] += dc;
                events.push(if reaching[n] {
                    "hand_release"
                } else {
                    "hand_short"
                });
            } else {
                pull_timer[n] = 0.0;
                applied.hand_forces[n] = total;
            }
            if pull_timer[n] > sim.release_timeout {
                failure = Some(format!("hand breakaway ({})", side_name(n)));
            }
        }

        // feet follow the actual contact state
        let mut foot_margin = f64::INFINITY;
        for m in 0..2 {
            if stance[m] {
                applied.foot_forces[m] = u_mpc.foot_forces[m];
                applied.foot_moments[m] = u_mpc.foot_moments[m];
                let f = applied.foot_forces[m];
                foot_margin = foot_margin.min(sc.mu_foot * f.z - f.xy().norm());
            }
        }
        if foot_margin < 0.0 {
            stats.foot_cone += 1;
            events.push("foot_cone");
        }

        // joint torques from the MPC wrench and the PD forces
        let mut commanded = applied;
        commanded.hand_forces = [0, 1].map(|n| {
            if engaged[n] {
                u_mpc.hand_forces[n]
            } else {
                Vector3::zeros()
            }
        });
        let pd = PdForces {
            hands: pd_hands,
            feet: pd_feet,
        };
        let torque = aggregate_and_map(&commanded, &pd, &jc, model);
        let mut torque_margin = f64::INFINITY;
        for j in 0..model.tau_max.len() {
            let raw = torque.raw[j].abs();
            stats.max_tau = stats.max_tau.max(raw);
            stats.max_excess = stats.max_excess.max(raw - model.tau_max[j]);
            torque_margin = torque_margin.min(model.tau_max[j] - raw);
        }
        if torque.saturated {
            stats.saturation += 1;
            events.push("saturation");
        }

        if tip_risk(&x, obj, &contact, &applied.hand_forces) {
            stats.tip += 1;
            events.push("tip_risk");
        }

        let mut record = SimLogRecord {
            t,
            state: x,
            applied,
            commanded: u_mpc,
            tau: torque.tau,
            tau_saturated: torque.saturated,
            foot_cone_margin: foot_margin,
            hand_cone_margin: hand_margin,
            torque_margin,
            stance,
            hands_engaged: engaged,
            yaw_error: x.object_euler.z - sc.command.yaw_at(t),
            mpc: diag,
            events,
        };
        if failure.is_some() {
            log.push(record);
            break 'run;
        }

        // plant
        let mut slipping = [false; 2];
        for sub in 0..substeps {
            let ts = t + sub as f64 * sim.dt;
            let xs = state.x;
            let mut input = PlantInput {
                hand_forces: applied.hand_forces,
                hands: contact,
                foot_forces: applied.foot_forces,
                foot_moments: applied.foot_moments,
                feet: foot_pts,
                stance,
                hand_normal: normal,
                hand_mu: sc.mu_hand,
                hand_damping: sim.hand_damping,
                object_disturbance_point: xs.object_position,
                ..Default::default()
            };
            for d in sim.disturbances.iter().filter(|d| d.active(ts)) {
                let f = Vector3::from(d.force);
                match d.target {
                    DisturbanceTarget::Object => {
                        input.object_disturbance += f;
                        input.object_disturbance_point =
                            xs.object_position + rot_z(xs.object_euler.z) * Vector3::from(d.lever);
                    }
                    DisturbanceTarget::Robot => input.robot_disturbance += f,
                }
            }
            state = match step_plant(&state, &input, &plant, sim.dt, ts) {
                Ok(s) => s,
                Err(e) => {
                    failure = Some(e.to_string());
                    end_time = ts;
                    log.push(record);
                    break 'run;
                }
            };
            slipping = [0, 1].map(|n| slipping[n] || state.hand_slipping[n]);
            for m in 0..2 {
                if !stance[m] {
                    swing_vel[m] += pd_feet[m] / sim.swing_foot_mass * sim.dt;
                    swing_pos[m] += swing_vel[m] * sim.dt;
                }
            }
        }
        end_time = t + dc;
        record.applied.hand_forces = state.hand_forces;
        if slipping.iter().any(|s| *s) {
            stats.slip += 1;
            record.events.push("hand_slip");
        }
        log.push(record);
        let xr = state.x;
        if xr.robot_position.z < sim.fall_height
            || xr.robot_euler.x.abs() > sim.max_tilt
            || xr.robot_euler.y.abs() > sim.max_tilt
        {
            failure = Some("fall".into());
            break 'run;
        }
    }

    let summary = summarize(sc, &pose, &log, &stats, failure, end_time);
    let timing = SolveTiming {
        mpc_mean_ms: if stats.solves > 0 {
            stats.total_ms / stats.solves as f64
        } else {
            0.0
        },
        mpc_max_ms: stats.max_ms,
    };
    Ok(SimRun {
        log,
        summary,
        pose,
        timing,
    })
}

fn side_name(n: usize) -> &'static str {
    if n == 0 {
        "left"
    } else {
        "right"
    }
}

/// Net moment of the hand forces and the object's weight about the front
/// bottom edge (object frame); flags a forward tipping moment above 1% of the
/// weight's restoring moment.
fn tip_risk(
    x: &UnifiedState,
    obj: &crate::dynamics::ObjectParams,
    hands: &[Vector3<f64>; 2],
    forces: &[Vector3<f64>; 2],
) -> bool {
    let ro = rot_z(x.object_euler.z);
    let pivot = x.object_position + ro * Vector3::new(obj.length / 2.0, 0.0, -obj.height / 2.0);
    let axis = ro * Vector3::y();
    let restoring = -(x.object_position - pivot)
        .cross(&Vector3::new(0.0, 0.0, -obj.mass * GRAVITY))
        .dot(&axis);
    let tipping: f64 = (0..2)
        .map(|n| (hands[n] - pivot).cross(&forces[n]).dot(&axis))
        .sum();
    tipping > 1.01 * restoring
}

fn summarize(
    sc: &Scenario,
    pose: &PoseSolution,
    log: &[SimLogRecord],
    stats: &Stats,
    failure: Option<String>,
    end_time: f64,
) -> SimSummary {
    let steady: Vec<&SimLogRecord> = log.iter().filter(|r| r.t >= sc.sim.steady_start).collect();
    let along = |r: &SimLogRecord, v: &Vector3<f64>| {
        let cmd = sc.command.velocity_at(r.t);
        let heading = rot_z(sc.command.yaw_at(r.t)) * Vector3::x();
        (v.dot(&heading) - cmd.dot(&heading)).abs()
    };
    let mean = |f: &dyn Fn(&SimLogRecord) -> f64| {
        if steady.is_empty() {
            f64::NAN
        } else {
            steady.iter().map(|r| f(r)).sum::<f64>() / steady.len() as f64
        }
    };
    let steady_velocity_error = mean(&|r| along(r, &r.state.robot_velocity));
    let steady_object_velocity_error = mean(&|r| along(r, &r.state.object_velocity));
    let max_object_yaw = log
        .iter()
        .map(|r| r.state.object_euler.z.abs())
        .fold(0.0, f64::max);
    let max_yaw_error = log.iter().map(|r| r.yaw_error.abs()).fold(0.0, f64::max);
    let final_yaw_error = log.last().map_or(f64::NAN, |r| r.yaw_error.abs());

    let last_end = sc
        .sim
        .disturbances
        .iter()
        .filter(|d| d.target == DisturbanceTarget::Object)
        .map(|d| d.end())
        .reduce(f64::max);
    let recovery_time = match last_end {
        Some(end) if failure.is_none() && end_time > end => {
            let dc = sc.sim.control_period();
            let last_bad = log
                .iter()
                .filter(|r| r.t >= end && r.yaw_error.abs() >= RECOVERY_YAW)
                .map(|r| r.t)
                .reduce(f64::max);
            match last_bad {
                None => Some(0.0),
                Some(t) if t + dc < end_time => Some(t + dc - end),
                Some(_) => None,
            }
        }
        _ => None,
    };

    SimSummary {
        scenario: sc.name.clone(),
        success: failure.is_none(),
        failure,
        end_time,
        pose_optimized: sc.pose_optimization,
        object_model: sc.mpc.object_model,
        steady_velocity_error,
        steady_object_velocity_error,
        max_object_yaw,
        max_yaw_error,
        final_yaw_error,
        max_tau: stats.max_tau,
        max_tau_excess: stats.max_excess,
        saturation_ticks: stats.saturation,
        recovery_time,
        impulse_left_min: stats.left_min,
        impulse_right_max: stats.right_max,
        reference_hand_force: Vector2::new(pose.hand_force_ref[0].x, pose.hand_force_ref[1].x)
            .max(),
        mpc_solves: stats.solves,
        mpc_backoffs: stats.backoffs,
        mpc_max_kkt: stats.max_kkt,
        mpc_max_violation: stats.max_violation,
        tip_risk_ticks: stats.tip,
        foot_cone_ticks: stats.foot_cone,
        hand_slip_ticks: stats.slip,
    }
}
