//! Loco-manipulation MPC.
//!
//! A tracking QP over the unified robot-object model. States are condensed
//! out, so the decision vector is the `k` stacked 16-entry inputs:
//!
//! ```text
//! X = Phi x0 + Gamma U,   min |X - X_ref|_Q + |u_f|_R + |F_h - F_h_ref|_S
//! ```
//!
//! The model is relinearized at each horizon step's reference angles while
//! contact points and the contact Jacobian are held at their current values.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_state_space, discretize, idx, ControlInput, InputVector, ObjectParams, StateMatrix,
    StateVector, UnifiedState, GRAVITY, INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::kinematics::{BodyPoints, ContactJacobian, RobotModel, NUM_JOINTS};
use crate::math::rot_z;
use crate::pose_opt::PoseSolution;
use crate::solvers::{
    qp_kkt_residuals, solve_qp, KktResiduals, QpProblem, SolveReport, SolveStatus,
};

/// State weights by position in the 27-entry state.
pub const DEFAULT_Q: [f64; STATE_DIM] = [
    1000.0, 1000.0, 500.0, 500.0, 500.0, 500.0, 10.0, 10.0, 5.0, 1.0, 1.0, 1.0, //
    0.0, 0.0, 1000.0, 500.0, 500.0, 0.0, 0.0, 0.0, 10.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0,
];
pub const DEFAULT_R: [f64; 10] = [1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 5e-4, 5e-4, 5e-4, 5e-4];
pub const DEFAULT_S: [f64; 3] = [1e-3; 3];

/// Linear inner pyramid coefficient of a friction cone.
pub fn pyramid_coefficient(mu: f64) -> f64 {
    FRAC_1_SQRT_2 * mu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Horizon step (s).
    pub dt: f64,
    pub q: [f64; STATE_DIM],
    pub r: [f64; 10],
    pub s: [f64; 3],
    pub hand_force_min: f64,
    pub hand_force_max: f64,
    pub foot_force_min: f64,
    pub foot_force_max: f64,
    /// Cone coefficients; the pyramids use `mu / sqrt(2)`.
    pub mu_foot: f64,
    pub mu_hand: f64,
    /// Factor applied to `s` on the single infeasibility retry.
    pub backoff: f64,
    /// When false the object block is dropped (locomotion MPC): hand forces are
    /// fixed to their reference and object states carry no weight.
    pub object_model: bool,
    /// Penalize foot forces relative to the pose's steady-state ground reaction
    /// instead of relative to zero.
    pub grf_reference: bool,
    /// Fraction of each joint's torque limit the QP may use. The first input
    /// is held while the Jacobian keeps moving, so a little headroom keeps
    /// the applied torque inside the true limit.
    pub torque_fraction: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.03,
            q: DEFAULT_Q,
            r: DEFAULT_R,
            s: DEFAULT_S,
            hand_force_min: 1.0,
            hand_force_max: 150.0,
            foot_force_min: 5.0,
            foot_force_max: 350.0,
            mu_foot: crate::pose_opt::DEFAULT_MU_FOOT,
            mu_hand: crate::pose_opt::DEFAULT_MU_HAND,
            backoff: 0.1,
            object_model: true,
            grf_reference: true,
            torque_fraction: 0.9,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("MPC horizon and dt must be positive".into()));
        }
        if !(self.torque_fraction > 0.0 && self.torque_fraction <= 1.0) {
            return Err(Error::Config("torque fraction must lie in (0, 1]".into()));
        }
        let weights = self.q.iter().chain(&self.r).chain(&self.s);
        if weights.clone().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("MPC weights must be nonnegative".into()));
        }
        if !(0.0..=self.hand_force_max).contains(&self.hand_force_min)
            || !(0.0..=self.foot_force_max).contains(&self.foot_force_min)
        {
            return Err(Error::Config(
                "MPC force bounds must satisfy 0 <= min <= max".into(),
            ));
        }
        for mu in [self.mu_foot, self.mu_hand] {
            if !(mu > 0.0 && mu < 2.0) {
                return Err(Error::Config(format!(
                    "friction coefficient {mu} outside (0, 2)"
                )));
            }
        }
        if !(self.backoff > 0.0 && self.backoff <= 1.0) {
            return Err(Error::Config("MPC backoff factor must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Every weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            q: self.q.map(|v| v * k),
            r: self.r.map(|v| v * k),
            s: self.s.map(|v| v * k),
            ..self.clone()
        }
    }
}

/// Contact flags per horizon step, `[left, right]` feet.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSchedule {
    pub stance: Vec<[bool; 2]>,
    pub dt: Vec<f64>,
}

impl GaitSchedule {
    pub fn constant(horizon: usize, dt: f64, stance: [bool; 2]) -> Self {
        Self {
            stance: vec![stance; horizon],
            dt: vec![dt; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.stance.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stance.is_empty() || self.stance.len() != self.dt.len() {
            return Err(Error::Config(
                "gait schedule is empty or inconsistent".into(),
            ));
        }
        if self.stance.iter().any(|s| !s[0] && !s[1]) {
            return Err(Error::Config(
                "gait schedule has a step with no stance foot".into(),
            ));
        }
        if self.dt.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("gait schedule dt must be positive".into()));
        }
        Ok(())
    }
}

/// Commanded motion: constant speed along the object heading, and an object
/// yaw that ramps linearly by `turn_angle` over `turn_duration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandProfile {
    /// Speed along the heading (m/s).
    pub speed: f64,
    pub initial_yaw: f64,
    pub turn_angle: f64,
    pub turn_start: f64,
    pub turn_duration: f64,
    /// Time over which the speed rises linearly from zero (s); 0 steps at once.
    pub ramp_time: f64,
}

impl Default for CommandProfile {
    fn default() -> Self {
        Self {
            speed: 0.3,
            initial_yaw: 0.0,
            turn_angle: 0.0,
            turn_start: 0.0,
            turn_duration: 1.0,
            ramp_time: 0.0,
        }
    }
}

impl CommandProfile {
    pub fn yaw_at(&self, t: f64) -> f64 {
        let s = ((t - self.turn_start) / self.turn_duration).clamp(0.0, 1.0);
        self.initial_yaw + self.turn_angle * s
    }

    pub fn yaw_rate_at(&self, t: f64) -> f64 {
        if self.turn_angle != 0.0
            && t >= self.turn_start
            && t < self.turn_start + self.turn_duration
        {
            self.turn_angle / self.turn_duration
        } else {
            0.0
        }
    }

    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let scale = if self.ramp_time > 0.0 {
            (t / self.ramp_time).clamp(0.0, 1.0)
        } else {
            1.0
        };
        rot_z(self.yaw_at(t)) * Vector3::new(self.speed * scale, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// Reference for `x[i + 1]`, `i = 0..k`.
    pub states: Vec<UnifiedState>,
    /// World-frame hand-force reference for `u[i]`.
    pub hand_forces: Vec<[Vector3<f64>; 2]>,
    /// World-frame foot-force reference for `u[i]`; a lone stance foot carries
    /// the pose's whole ground reaction.
    pub foot_forces: Vec<[Vector3<f64>; 2]>,
}

/// Horizon reference starting from the current state at time `t`.
///
/// Object position and yaw follow the command; the robot CoM and heading are
/// tied to the object through the pose solution's relative placement (or, with
/// `object_model` off, integrated from the robot's own position), and the
/// trunk roll/pitch come from the optimal pose.
pub fn build_reference(
    cmd: &CommandProfile,
    t: f64,
    pose: &PoseSolution,
    x: &UnifiedState,
    sched: &GaitSchedule,
    object_model: bool,
) -> ReferenceTrajectory {
    let k = sched.horizon();
    let offset = pose.com - pose.object_position;
    let mut p_o = x.object_position;
    let mut p_r = x.robot_position;
    let mut tau = t;
    let mut states = Vec::with_capacity(k);
    let mut hand_forces = Vec::with_capacity(k);
    let mut foot_forces = Vec::with_capacity(k);
    for i in 0..k {
        let dt = sched.dt[i];
        // hand forces act over [tau, tau + dt) at the yaw of that interval
        let frame_yaw = if object_model {
            cmd.yaw_at(tau)
        } else {
            x.robot_euler.z + cmd.yaw_rate_at(tau) * (tau - t)
        };
        let heading = rot_z(frame_yaw);
        hand_forces.push(pose.hand_force_ref.map(|f| heading * f));
        let grf = pose.input.foot_forces;
        let feet = match sched.stance[i] {
            [true, true] => grf,
            [true, false] => [grf[0] + grf[1], Vector3::zeros()],
            [false, true] => [Vector3::zeros(), grf[0] + grf[1]],
            [false, false] => [Vector3::zeros(); 2],
        };
        foot_forces.push(feet.map(|f| heading * f));

        let v = cmd.velocity_at(tau);
        p_o += v * dt;
        p_r += v * dt;
        tau += dt;
        let yaw = cmd.yaw_at(tau);
        let rate = cmd.yaw_rate_at(tau);
        let rz = rot_z(yaw);
        let mut s = UnifiedState::default();
        s.object_position = Vector3::new(p_o.x, p_o.y, x.object_position.z);
        s.object_euler = Vector3::new(0.0, 0.0, yaw);
        s.object_velocity = cmd.velocity_at(tau);
        s.object_omega = Vector3::new(0.0, 0.0, rate);
        // without the object model the robot only follows the command
        let c = if object_model {
            s.object_position + rz * offset
        } else {
            p_r
        };
        s.robot_position = Vector3::new(c.x, c.y, pose.com.z);
        s.robot_euler = Vector3::new(pose.euler.x, pose.euler.y, yaw + pose.euler.z);
        s.robot_velocity = s.object_velocity;
        s.robot_omega = s.object_omega;
        s.gravity = Vector3::new(0.0, 0.0, -GRAVITY);
        states.push(s);
    }
    ReferenceTrajectory {
        states,
        hand_forces,
        foot_forces,
    }
}

/// Everything the QP builder needs about the current instant.
#[derive(Debug, Clone)]
pub struct MpcContext<'a> {
    pub model: &'a RobotModel,
    pub object: &'a ObjectParams,
    pub state: &'a UnifiedState,
    pub points: &'a BodyPoints,
    pub jacobian: &'a ContactJacobian,
    /// Hands currently pushing; a disengaged hand's force is fixed to zero.
    pub hands_engaged: [bool; 2],
}

/// The condensed QP and the rollout matrices `X = phi x0 + gamma U`.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub qp: QpProblem,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub x0: StateVector,
}

impl MpcQp {
    pub fn predict(&self, u: &DVector<f64>) -> DVector<f64> {
        let x0 = DVector::from_column_slice(self.x0.as_slice());
        &self.phi * x0 + &self.gamma * u
    }
}

struct Rows {
    a: Vec<DVector<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Rows {
    fn push(&mut self, row: DVector<f64>, lo: f64, hi: f64) {
        // rows without coefficients (swing legs) carry no information
        if row.amax() > 0.0 {
            self.a.push(row);
            self.lo.push(lo);
            self.hi.push(hi);
        }
    }

    fn matrix(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.a.len(), n);
        for (i, r) in self.a.iter().enumerate() {
            m.set_row(i, &r.transpose());
        }
        m
    }
}

/// Builds the condensed tracking QP.
pub fn build_mpc_qp(
    ctx: &MpcContext,
    reference: &ReferenceTrajectory,
    sched: &GaitSchedule,
    cfg: &MpcConfig,
) -> Result<MpcQp> {
    cfg.validate()?;
    sched.validate()?;
    let k = sched.horizon();
    if reference.states.len() != k
        || reference.hand_forces.len() != k
        || reference.foot_forces.len() != k
    {
        return Err(Error::Config(
            "reference length does not match the horizon".into(),
        ));
    }
    let n = k * INPUT_DIM;
    let nx = STATE_DIM;

    let mut a_d = Vec::with_capacity(k);
    let mut b_d = Vec::with_capacity(k);
    for i in 0..k {
        let mut lin = *ctx.state;
        lin.robot_euler = reference.states[i].robot_euler;
        lin.object_euler = reference.states[i].object_euler;
        let ss = build_state_space(ctx.model, ctx.object, &lin, ctx.points)?;
        let (a, b) = discretize(&ss, sched.dt[i]);
        a_d.push(a);
        b_d.push(b);
    }

    // Rollout: phi_i = A_i ... A_0, gamma[i][j] = A_i ... A_{j+1} B_j.
    let mut phi = DMatrix::zeros(k * nx, nx);
    let mut gamma = DMatrix::zeros(k * nx, n);
    let mut acc = StateMatrix::identity();
    for i in 0..k {
        acc = a_d[i] * acc;
        phi.view_mut((i * nx, 0), (nx, nx)).copy_from(&acc);
        gamma
            .view_mut((i * nx, i * INPUT_DIM), (nx, INPUT_DIM))
            .copy_from(&b_d[i]);
        for j in 0..i {
            let prev = gamma
                .view(((i - 1) * nx, j * INPUT_DIM), (nx, INPUT_DIM))
                .into_owned();
            gamma
                .view_mut((i * nx, j * INPUT_DIM), (nx, INPUT_DIM))
                .copy_from(&(a_d[i] * prev));
        }
    }

    let mut q = cfg.q;
    if !cfg.object_model {
        for v in &mut q[idx::OBJECT_EULER..idx::GRAVITY] {
            *v = 0.0;
        }
    }
    let q_bar = DVector::from_fn(k * nx, |r, _| q[r % nx]);
    let mut u_weight = DVector::zeros(n);
    let mut u_target = DVector::zeros(n);
    for i in 0..k {
        for h in 0..2 {
            for c in 0..3 {
                u_weight[i * INPUT_DIM + idx::hand(h) + c] = cfg.s[c];
                u_target[i * INPUT_DIM + idx::hand(h) + c] = reference.hand_forces[i][h][c];
            }
        }
        for (c, w) in cfg.r.iter().enumerate() {
            u_weight[i * INPUT_DIM + idx::foot(0) + c] = *w;
        }
        if cfg.grf_reference {
            for m in 0..2 {
                for c in 0..3 {
                    u_target[i * INPUT_DIM + idx::foot(m) + c] = reference.foot_forces[i][m][c];
                }
            }
        }
    }
    let x0 = ctx.state.to_vector();
    let x_ref = DVector::from_fn(k * nx, |r, _| reference.states[r / nx].to_vector()[r % nx]);
    let free = &phi * DVector::from_column_slice(x0.as_slice()) - &x_ref;
    let gq = gamma.transpose() * DMatrix::from_diagonal(&q_bar);
    let mut hessian = &gq * &gamma * 2.0;
    for r in 0..n {
        hessian[(r, r)] += 2.0 * u_weight[r];
    }
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear = &gq * &free * 2.0 - u_weight.component_mul(&u_target) * 2.0;

    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    let mut ineq = Rows {
        a: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
    };
    let mut eq = Rows {
        a: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
    };
    let mu_f = pyramid_coefficient(cfg.mu_foot);
    let mu_h = pyramid_coefficient(cfg.mu_hand);
    let yaw = ctx.state.object_euler.z;
    let (ex, ey) = (rot_z(yaw) * Vector3::x(), rot_z(yaw) * Vector3::y());
    let tau_max = ctx.model.tau_max.map(|t| t * cfg.torque_fraction);

    for i in 0..k {
        let base = i * INPUT_DIM;
        for m in 0..2 {
            let f = base + idx::foot(m);
            let mo = base + idx::moment(m);
            if sched.stance[i][m] {
                lower[f + 2] = cfg.foot_force_min;
                upper[f + 2] = cfg.foot_force_max;
                for c in 0..2 {
                    for sign in [1.0, -1.0] {
                        let mut row = DVector::zeros(n);
                        row[f + c] = sign;
                        row[f + 2] = -mu_f;
                        ineq.push(row, f64::NEG_INFINITY, 0.0);
                    }
                }
            } else {
                for v in (f..f + 3).chain(mo..mo + 2) {
                    lower[v] = 0.0;
                    upper[v] = 0.0;
                }
            }
        }
        for h in 0..2 {
            let hv = base + idx::hand(h);
            if !ctx.hands_engaged[h] {
                for v in hv..hv + 3 {
                    lower[v] = 0.0;
                    upper[v] = 0.0;
                }
                continue;
            }
            if !cfg.object_model {
                for c in 0..3 {
                    lower[hv + c] = reference.hand_forces[i][h][c];
                    upper[hv + c] = reference.hand_forces[i][h][c];
                }
                continue;
            }
            let mut along = DVector::zeros(n);
            let mut lateral = DVector::zeros(n);
            for c in 0..3 {
                along[hv + c] = ex[c];
                lateral[hv + c] = ey[c];
            }
            ineq.push(along.clone(), cfg.hand_force_min, cfg.hand_force_max);
            eq.push(lateral, 0.0, 0.0);
            for sign in [1.0, -1.0] {
                let mut row = -&along * mu_h;
                row[hv + 2] = sign;
                ineq.push(row, f64::NEG_INFINITY, 0.0);
            }
        }
        for j in 0..NUM_JOINTS {
            let mut row = DVector::zeros(n);
            for r in 0..INPUT_DIM {
                row[base + r] = ctx.jacobian[(r, j)];
            }
            ineq.push(row, -tau_max[j], tau_max[j]);
        }
    }

    let eq_matrix = eq.matrix(n);
    let eq_rhs = DVector::from_vec(eq.lo.clone());
    let qp = QpProblem::new(hessian, linear)
        .with_equalities(eq_matrix, eq_rhs)
        .with_inequalities(
            ineq.matrix(n),
            DVector::from_vec(ineq.lo),
            DVector::from_vec(ineq.hi),
        )
        .with_bounds(lower, upper);
    Ok(MpcQp { qp, phi, gamma, x0 })
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub u0: ControlInput,
    /// All `k` inputs, stacked.
    pub inputs: DVector<f64>,
    /// Predicted `x[1..=k]`, stacked.
    pub predicted: DVector<f64>,
    pub cost: f64,
    pub report: SolveReport,
    /// Residuals from the independent KKT checker.
    pub kkt: KktResiduals,
    pub backed_off: bool,
    pub active_inequalities: usize,
}

impl MpcSolution {
    pub fn predicted_state(&self, i: usize) -> StateVector {
        StateVector::from_column_slice(
            &self.predicted.as_slice()[i * STATE_DIM..(i + 1) * STATE_DIM],
        )
    }

    pub fn input(&self, i: usize) -> InputVector {
        InputVector::from_column_slice(&self.inputs.as_slice()[i * INPUT_DIM..(i + 1) * INPUT_DIM])
    }
}

pub const MPC_QP_TOL: f64 = 1e-8;

/// Solves one receding-horizon step. On infeasibility the hand-tracking weight
/// is scaled by `cfg.backoff` and the minimum hand force dropped to zero for a
/// single retry.
pub fn solve_mpc_step(
    ctx: &MpcContext,
    reference: &ReferenceTrajectory,
    sched: &GaitSchedule,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    let first = build_mpc_qp(ctx, reference, sched, cfg)?;
    let sol = solve_qp(&first.qp, MPC_QP_TOL)?;
    let (built, sol, backed_off) = if sol.report.status == SolveStatus::Infeasible {
        let relaxed = MpcConfig {
            s: cfg.s.map(|v| v * cfg.backoff),
            hand_force_min: 0.0,
            ..cfg.clone()
        };
        log::debug!("MPC infeasible, retrying with relaxed hand tracking");
        let built = build_mpc_qp(ctx, reference, sched, &relaxed)?;
        let sol = solve_qp(&built.qp, MPC_QP_TOL)?;
        if sol.report.status == SolveStatus::Infeasible {
            return Err(Error::Solver("MPC QP infeasible after backoff".into()));
        }
        (built, sol, true)
    } else {
        (first, sol, false)
    };
    let kkt = qp_kkt_residuals(&built.qp, &sol.x, &sol.multipliers);
    let active_inequalities = sol.multipliers.ineq.iter().filter(|y| **y != 0.0).count()
        + sol.multipliers.bounds.iter().filter(|y| **y != 0.0).count();
    let predicted = built.predict(&sol.x);
    let u0 = ControlInput::from_slice(&sol.x.as_slice()[..INPUT_DIM]);
    Ok(MpcSolution {
        u0,
        predicted,
        cost: sol.objective,
        report: sol.report,
        kkt,
        backed_off,
        active_inequalities,
        inputs: sol.x,
    })
}

/// Independent check of the MPC hard constraints on one input, with the
/// pyramid coefficients and yaw used to build the QP. Returns the largest
/// violation.
pub fn constraint_violation(
    u: &ControlInput,
    stance: [bool; 2],
    engaged: [bool; 2],
    object_yaw: f64,
    jacobian: &ContactJacobian,
    model: &RobotModel,
    cfg: &MpcConfig,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mu_f = pyramid_coefficient(cfg.mu_foot);
    let mu_h = pyramid_coefficient(cfg.mu_hand);
    for m in 0..2 {
        let f = u.foot_forces[m];
        if stance[m] {
            worst = worst
                .max(cfg.foot_force_min - f.z)
                .max(f.z - cfg.foot_force_max);
            worst = worst
                .max(f.x.abs() - mu_f * f.z)
                .max(f.y.abs() - mu_f * f.z);
        } else {
            worst = worst.max(f.amax()).max(u.foot_moments[m].amax());
        }
    }
    let heading = rot_z(object_yaw);
    for h in 0..2 {
        let local = heading.transpose() * u.hand_forces[h];
        if !engaged[h] {
            worst = worst.max(local.amax());
        } else if cfg.object_model {
            worst = worst
                .max(cfg.hand_force_min - local.x)
                .max(local.x - cfg.hand_force_max);
            worst = worst.max(local.y.abs()).max(local.z.abs() - mu_h * local.x);
        }
    }
    let tau = jacobian.transpose() * u.to_vector();
    for j in 0..NUM_JOINTS {
        worst = worst.max(tau[j].abs() - model.tau_max[j] * cfg.torque_fraction);
    }
    worst
}
