//! Steady-state whole-body pushing pose.
//!
//! One NLP per object setup picks the CoM position, trunk orientation, joint
//! angles and contact forces that hold the coupled robot-object system in
//! equilibrium while the object slides at constant velocity. Everything is
//! solved in the pushing frame: the object's initial heading is rotated onto
//! `+x`, so `object_yaw` only matters when mapping the result back to the world.
//!
//! Decision vector (38 entries):
//!
//! ```text
//! [ p_c (3) | theta (3) | q (16) | u / (m_b g) (16) ]
//! ```
//!
//! Forces are scaled by the robot weight and the objective by its square so
//! that every constraint row is O(1).

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{idx, moment_selection, ControlInput, ObjectParams, GRAVITY, INPUT_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{
    body_points, limb_point_sensitivity, solve_limb_ik, trunk_point_sensitivity, BasePose,
    BodyPoints, Limb, PointSensitivity, RobotModel, Side, NUM_JOINTS,
};
use crate::math::{rot_z, skew};
use crate::solvers::{solve_nlp, KktResiduals, NlpOptions, NlpProblem, SolveReport, SolveStatus};

const PC: usize = 0;
const TH: usize = 3;
const Q: usize = 6;
const U: usize = 22;
pub const NUM_POSE_VARS: usize = 38;
pub const NUM_POSE_EQ: usize = 15;
pub const NUM_POSE_INEQ: usize = 20;

/// Steady-state residual target (scaled by robot weight).
pub const STEADY_STATE_TOL: f64 = 1e-6;

pub const DEFAULT_MU_FOOT: f64 = 0.7;
pub const DEFAULT_MU_HAND: f64 = 0.6;
/// Distance from the robot origin to the object's near face.
pub const DEFAULT_GAP: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseWeights {
    pub alpha: f64,
    pub beta: [f64; 3],
    pub gamma: [f64; INPUT_DIM],
}

impl Default for PoseWeights {
    fn default() -> Self {
        let mut gamma = [1.0; INPUT_DIM];
        gamma[12..].fill(5.0);
        Self {
            alpha: 50.0,
            beta: [50.0, 5.0, 50.0],
            gamma,
        }
    }
}

impl PoseWeights {
    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.alpha)
            .chain(self.beta)
            .chain(self.gamma);
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "pose weight {w} must be nonnegative"
                )));
            }
        }
        if !(self.mean() > 0.0) {
            return Err(Error::InvalidParameter("pose weights are all zero".into()));
        }
        Ok(())
    }

    fn mean(&self) -> f64 {
        (self.alpha + self.beta.iter().sum::<f64>() + self.gamma.iter().sum::<f64>())
            / (4 + INPUT_DIM) as f64
    }

    /// Same relative weighting with the mean of the default weights, so that
    /// a uniform rescale leaves the NLP unchanged.
    pub fn normalized(&self) -> Self {
        self.scaled(Self::default().mean() / self.mean())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            alpha: self.alpha * k,
            beta: self.beta.map(|b| b * k),
            gamma: self.gamma.map(|g| g * k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseProblemInputs {
    pub object: ObjectParams,
    /// Initial object CoM (m).
    pub object_position: Vector3<f64>,
    #[serde(default)]
    pub object_yaw: f64,
    /// Reference robot CoM; only its height enters the cost, x/y centre the search box.
    pub com_ref: Vector3<f64>,
    pub mu_foot: f64,
    pub mu_hand: f64,
    #[serde(default)]
    pub weights: PoseWeights,
    /// Smallest knee flexion the pose may use (rad). Keeps a stretch margin
    /// so the walking controller can still extend the stance leg.
    #[serde(default = "default_min_knee_flexion")]
    pub min_knee_flexion: f64,
}

pub const DEFAULT_MIN_KNEE_FLEXION: f64 = 0.5;

fn default_min_knee_flexion() -> f64 {
    DEFAULT_MIN_KNEE_FLEXION
}

impl PoseProblemInputs {
    /// Object on the ground `gap` metres ahead of a robot standing at the origin.
    pub fn in_front_of(
        model: &RobotModel,
        object: ObjectParams,
        gap: f64,
        mu_foot: f64,
        mu_hand: f64,
    ) -> Self {
        let object_position = Vector3::new(gap + object.length / 2.0, 0.0, object.height / 2.0);
        Self {
            object,
            object_position,
            object_yaw: 0.0,
            com_ref: Vector3::new(0.0, 0.0, model.standing_height),
            mu_foot,
            mu_hand,
            weights: PoseWeights::default(),
            min_knee_flexion: DEFAULT_MIN_KNEE_FLEXION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        self.weights.validate()?;
        for (name, mu) in [("mu_foot", self.mu_foot), ("mu_hand", self.mu_hand)] {
            if !(mu > 0.0 && mu < 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {mu} outside (0, 2)"
                )));
            }
        }
        if !(self.min_knee_flexion >= 0.0) {
            return Err(Error::InvalidParameter(
                "minimum knee flexion must be nonnegative".into(),
            ));
        }
        let finite = self
            .object_position
            .iter()
            .chain(self.com_ref.iter())
            .all(|v| v.is_finite());
        if !finite || !self.object_yaw.is_finite() {
            return Err(Error::NonFinite("pose inputs"));
        }
        Ok(())
    }

    /// Object position and reference CoM expressed in the pushing frame.
    fn local(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = rot_z(-self.object_yaw);
        (
            self.object_position,
            self.object_position + r * (self.com_ref - self.object_position),
        )
    }
}

/// Named groups of pose constraints, used to diagnose infeasible setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFamily {
    SteadyState,
    ShoulderBehindHand,
    HandFriction,
    FootFriction,
    HandOnFace,
    FeetBehindHips,
    FeetOnGround,
}

impl ConstraintFamily {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintFamily::SteadyState => "steady_state",
            ConstraintFamily::ShoulderBehindHand => "shoulder_behind_hand",
            ConstraintFamily::HandFriction => "hand_friction",
            ConstraintFamily::FootFriction => "foot_friction",
            ConstraintFamily::HandOnFace => "hand_on_face",
            ConstraintFamily::FeetBehindHips => "feet_behind_hips",
            ConstraintFamily::FeetOnGround => "feet_on_ground",
        }
    }

    pub fn of_equality(i: usize) -> Self {
        match i {
            0..=10 => ConstraintFamily::SteadyState,
            11 | 12 => ConstraintFamily::HandOnFace,
            _ => ConstraintFamily::FeetOnGround,
        }
    }

    pub fn of_inequality(i: usize) -> Self {
        match i {
            0 | 1 => ConstraintFamily::ShoulderBehindHand,
            2..=5 => ConstraintFamily::HandFriction,
            6..=9 => ConstraintFamily::FootFriction,
            10..=17 => ConstraintFamily::HandOnFace,
            _ => ConstraintFamily::FeetBehindHips,
        }
    }
}

/// Residual of the zero-acceleration equations of motion, in N and N m.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SteadyStateResidual {
    pub robot_force: Vector3<f64>,
    pub robot_moment: Vector3<f64>,
    /// Only x and y; the ground normal absorbs the vertical component.
    pub object_force: Vector2<f64>,
    pub object_moment: Vector3<f64>,
}

impl SteadyStateResidual {
    /// Largest entry divided by the robot weight.
    pub fn scaled_max(&self, model: &RobotModel) -> f64 {
        let m = self
            .robot_force
            .amax()
            .max(self.robot_moment.amax())
            .max(self.object_force.amax())
            .max(self.object_moment.amax());
        m / (model.mass * GRAVITY)
    }
}

/// Steady-state residual of a configuration and input, evaluated from forward
/// kinematics (pushing frame).
pub fn steady_state_residual(
    model: &RobotModel,
    object: &ObjectParams,
    object_position: &Vector3<f64>,
    base: &BasePose,
    q: &[f64],
    u: &ControlInput,
) -> SteadyStateResidual {
    let pts = body_points(model, base, q);
    let weight = Vector3::new(0.0, 0.0, -model.mass * GRAVITY);
    let mut robot_force = weight;
    let mut robot_moment = Vector3::zeros();
    let mut hand_sum = Vector3::zeros();
    let mut object_moment = -Vector3::y() * (0.5 * object.height * object.friction_force());
    let sel = moment_selection();
    for n in 0..2 {
        let fh = u.hand_forces[n];
        let ff = u.foot_forces[n];
        robot_force += ff - fh;
        robot_moment += (pts.feet[n] - base.position).cross(&ff) + sel * u.foot_moments[n]
            - (pts.hands[n] - base.position).cross(&fh);
        hand_sum += fh;
        object_moment += (pts.hands[n] - object_position).cross(&fh);
    }
    let object_force = Vector2::new(hand_sum.x - object.friction_force(), hand_sum.y);
    SteadyStateResidual {
        robot_force,
        robot_moment,
        object_force,
        object_moment,
    }
}

/// The pose NLP; implements [`NlpProblem`] with analytic first derivatives.
#[derive(Debug, Clone)]
pub struct PoseNlp {
    pub model: RobotModel,
    pub inputs: PoseProblemInputs,
    object_position: Vector3<f64>,
    com_ref: Vector3<f64>,
    weights: PoseWeights,
    force_scale: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

/// Quantities shared by constraint values and Jacobians.
struct Frame {
    base: BasePose,
    q: [f64; NUM_JOINTS],
    u: [Vector3<f64>; 4],
    m: [Vector2<f64>; 2],
}

impl Frame {
    fn hand(&self, n: usize) -> Vector3<f64> {
        self.u[n]
    }
    fn foot(&self, n: usize) -> Vector3<f64> {
        self.u[2 + n]
    }
}

fn hand_var(n: usize) -> usize {
    U + idx::hand(n)
}

fn foot_var(n: usize) -> usize {
    U + idx::foot(n)
}

fn moment_var(n: usize) -> usize {
    U + idx::moment(n)
}

/// Adds `m * d point / d X` into rows `row..row+3` of `jac`.
fn add_point(
    jac: &mut DMatrix<f64>,
    row: usize,
    m: &Matrix3<f64>,
    s: &PointSensitivity,
    with_com: bool,
) {
    if with_com {
        let mut v = jac.view_mut((row, PC), (3, 3));
        v += m;
    }
    let d = m * s.d_euler;
    let mut v = jac.view_mut((row, TH), (3, 3));
    v += d;
    for (k, j) in s.joints.clone().enumerate() {
        let col = m * s.d_joints[k];
        let mut v = jac.view_mut((row, Q + j), (3, 1));
        v += col;
    }
}

/// Adds `w . d point / d X` into row `row`.
fn add_point_row(
    jac: &mut DMatrix<f64>,
    row: usize,
    w: &Vector3<f64>,
    s: &PointSensitivity,
    with_com: bool,
) {
    if with_com {
        for k in 0..3 {
            jac[(row, PC + k)] += w[k];
        }
    }
    let d = s.d_euler.transpose() * w;
    for k in 0..3 {
        jac[(row, TH + k)] += d[k];
    }
    for (k, j) in s.joints.clone().enumerate() {
        jac[(row, Q + j)] += w.dot(&s.d_joints[k]);
    }
}

struct Sensitivities {
    hands: [PointSensitivity; 2],
    feet: [PointSensitivity; 2],
    shoulders: [PointSensitivity; 2],
    hips: [PointSensitivity; 2],
}

impl PoseNlp {
    pub fn new(inputs: PoseProblemInputs, model: RobotModel) -> Result<Self> {
        model.validate()?;
        inputs.validate()?;
        let (object_position, com_ref) = inputs.local();
        let force_scale = model.mass * GRAVITY;
        let mut lower = DVector::from_element(NUM_POSE_VARS, -50.0);
        let mut upper = DVector::from_element(NUM_POSE_VARS, 50.0);
        for k in 0..2 {
            lower[PC + k] = com_ref[k] - 0.5;
            upper[PC + k] = com_ref[k] + 0.5;
        }
        lower[PC + 2] = 0.3;
        upper[PC + 2] = model.standing_height + 0.05;
        let euler_bounds = [0.5, 1.2, 0.5];
        for k in 0..3 {
            lower[TH + k] = -euler_bounds[k];
            upper[TH + k] = euler_bounds[k];
        }
        for j in 0..NUM_JOINTS {
            lower[Q + j] = model.joint_lower[j];
            upper[Q + j] = model.joint_upper[j];
        }
        for knee in [3, 8] {
            lower[Q + knee] = lower[Q + knee]
                .max(inputs.min_knee_flexion)
                .min(upper[Q + knee]);
        }
        let weights = inputs.weights.normalized();
        let nlp = Self {
            model,
            inputs,
            object_position,
            com_ref,
            weights,
            force_scale,
            lower,
            upper,
        };
        nlp.check_reachable()?;
        Ok(nlp)
    }

    /// Coarse reachability test of the object's near face.
    fn check_reachable(&self) -> Result<()> {
        let face = self.object_position.x - self.inputs.object.length / 2.0;
        let gap = face - self.com_ref.x;
        let lean = self.model.trunk_height / 2.0 * 1.2f64.sin();
        let reach = 0.5 + lean + self.model.arm_reach();
        if gap > reach || gap < -0.5 {
            return Err(Error::Unreachable {
                family: ConstraintFamily::HandOnFace.name(),
                detail: format!("near face is {gap:.3} m ahead of the reference CoM; reachable range [-0.5, {reach:.3}]"),
            });
        }
        if self.object_position.z + self.inputs.object.height / 2.0 <= 0.0 {
            return Err(Error::Unreachable {
                family: ConstraintFamily::HandOnFace.name(),
                detail: "object top is below the ground".into(),
            });
        }
        Ok(())
    }

    fn frame(&self, x: &DVector<f64>) -> Frame {
        let base = BasePose::new(
            x.fixed_rows::<3>(PC).into_owned(),
            x.fixed_rows::<3>(TH).into_owned(),
        );
        let mut q = [0.0; NUM_JOINTS];
        q.copy_from_slice(x.rows(Q, NUM_JOINTS).as_slice());
        let u = [
            x.fixed_rows::<3>(hand_var(0)).into_owned(),
            x.fixed_rows::<3>(hand_var(1)).into_owned(),
            x.fixed_rows::<3>(foot_var(0)).into_owned(),
            x.fixed_rows::<3>(foot_var(1)).into_owned(),
        ];
        let m = [
            x.fixed_rows::<2>(moment_var(0)).into_owned(),
            x.fixed_rows::<2>(moment_var(1)).into_owned(),
        ];
        Frame { base, q, u, m }
    }

    fn sensitivities(&self, f: &Frame) -> Sensitivities {
        let arm = |s| limb_point_sensitivity(&self.model, &f.base, Limb::Arm(s), &f.q);
        let leg = |s| limb_point_sensitivity(&self.model, &f.base, Limb::Leg(s), &f.q);
        let trunk = |p| trunk_point_sensitivity(&f.base, p);
        Sensitivities {
            hands: [arm(Side::Left), arm(Side::Right)],
            feet: [leg(Side::Left), leg(Side::Right)],
            shoulders: [
                trunk(self.model.shoulder_offset(Side::Left)),
                trunk(self.model.shoulder_offset(Side::Right)),
            ],
            hips: [
                trunk(self.model.hip_offset(Side::Left)),
                trunk(self.model.hip_offset(Side::Right)),
            ],
        }
    }

    fn points(&self, f: &Frame) -> BodyPoints {
        body_points(&self.model, &f.base, &f.q)
    }

    fn friction_scaled(&self) -> f64 {
        self.inputs.object.friction_force() / self.force_scale
    }

    /// Initial guess: standing, hands at shoulder height, weight split evenly.
    pub fn standing_guess(&self) -> DVector<f64> {
        let mut x = DVector::zeros(NUM_POSE_VARS);
        x[PC] = self.com_ref.x;
        x[PC + 1] = self.com_ref.y;
        x[PC + 2] = self.com_ref.z.clamp(self.lower[PC + 2], self.upper[PC + 2]);
        let q = self.model.standing_configuration();
        x.rows_mut(Q, NUM_JOINTS).copy_from_slice(&q);
        x[foot_var(0) + 2] = 0.5;
        x[foot_var(1) + 2] = 0.5;
        x
    }

    /// Converts a decision vector into a solution (pushing frame).
    pub fn unpack(&self, x: &DVector<f64>) -> (BasePose, [f64; NUM_JOINTS], ControlInput) {
        let f = self.frame(x);
        let s = self.force_scale;
        let input = ControlInput {
            hand_forces: [f.hand(0) * s, f.hand(1) * s],
            foot_forces: [f.foot(0) * s, f.foot(1) * s],
            foot_moments: [f.m[0] * s, f.m[1] * s],
        };
        (f.base, f.q, input)
    }
}

impl NlpProblem for PoseNlp {
    fn num_vars(&self) -> usize {
        NUM_POSE_VARS
    }

    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let w = &self.weights;
        let s2 = self.force_scale * self.force_scale;
        let dz = self.com_ref.z - x[PC + 2];
        let mut j = w.alpha * dz * dz / s2;
        for k in 0..3 {
            j += w.beta[k] * x[TH + k] * x[TH + k] / s2;
        }
        for k in 0..INPUT_DIM {
            j += w.gamma[k] * x[U + k] * x[U + k];
        }
        Ok(j)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = &self.weights;
        let s2 = self.force_scale * self.force_scale;
        let mut g = DVector::zeros(NUM_POSE_VARS);
        g[PC + 2] = -2.0 * w.alpha * (self.com_ref.z - x[PC + 2]) / s2;
        for k in 0..3 {
            g[TH + k] = 2.0 * w.beta[k] * x[TH + k] / s2;
        }
        for k in 0..INPUT_DIM {
            g[U + k] = 2.0 * w.gamma[k] * x[U + k];
        }
        Ok(g)
    }

    fn eq_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.frame(x);
        let p = self.points(&f);
        let pc = f.base.position;
        let po = self.object_position;
        let obj = &self.inputs.object;
        let sel = moment_selection();
        let mut c = DVector::zeros(NUM_POSE_EQ);

        let mut force = -Vector3::z();
        let mut moment = Vector3::zeros();
        let mut hand_sum = Vector3::zeros();
        let mut obj_moment = -Vector3::y() * (0.5 * obj.height * self.friction_scaled());
        for n in 0..2 {
            force += f.foot(n) - f.hand(n);
            moment += (p.feet[n] - pc).cross(&f.foot(n)) + sel * f.m[n]
                - (p.hands[n] - pc).cross(&f.hand(n));
            hand_sum += f.hand(n);
            obj_moment += (p.hands[n] - po).cross(&f.hand(n));
        }
        c.fixed_rows_mut::<3>(0).copy_from(&force);
        c.fixed_rows_mut::<3>(3).copy_from(&moment);
        c[6] = hand_sum.x - self.friction_scaled();
        c[7] = hand_sum.y;
        c.fixed_rows_mut::<3>(8).copy_from(&obj_moment);
        let face = po.x - obj.length / 2.0;
        for n in 0..2 {
            c[11 + n] = p.hands[n].x - face;
            c[13 + n] = p.feet[n].z;
        }
        Ok(c)
    }

    fn eq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = self.frame(x);
        let s = self.sensitivities(&f);
        let pc = f.base.position;
        let po = self.object_position;
        let sel = moment_selection();
        let eye = Matrix3::identity();
        let mut j = DMatrix::zeros(NUM_POSE_EQ, NUM_POSE_VARS);
        for n in 0..2 {
            let (fh, ff) = (f.hand(n), f.foot(n));
            // robot force
            j.view_mut((0, foot_var(n)), (3, 3)).copy_from(&eye);
            j.view_mut((0, hand_var(n)), (3, 3)).copy_from(&(-eye));
            // robot moment: (p_f - p_c) x F_f + L M - (p_h - p_c) x F_h
            let rf = s.feet[n].point - pc;
            let rh = s.hands[n].point - pc;
            add_point(&mut j, 3, &(-skew(&ff)), &s.feet[n], false);
            add_point(&mut j, 3, &skew(&fh), &s.hands[n], false);
            j.view_mut((3, foot_var(n)), (3, 3)).copy_from(&skew(&rf));
            j.view_mut((3, hand_var(n)), (3, 3))
                .copy_from(&(-skew(&rh)));
            j.view_mut((3, moment_var(n)), (3, 2)).copy_from(&sel);
            // object force x, y
            j[(6, hand_var(n))] = 1.0;
            j[(7, hand_var(n) + 1)] = 1.0;
            // object moment
            let ro = s.hands[n].point - po;
            add_point(&mut j, 8, &(-skew(&fh)), &s.hands[n], true);
            j.view_mut((8, hand_var(n)), (3, 3)).copy_from(&skew(&ro));
            // hand on face, feet on ground
            add_point_row(&mut j, 11 + n, &Vector3::x(), &s.hands[n], true);
            add_point_row(&mut j, 13 + n, &Vector3::z(), &s.feet[n], true);
        }
        Ok(j)
    }

    fn ineq_constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.frame(x);
        let p = self.points(&f);
        let po = self.object_position;
        let obj = &self.inputs.object;
        let (mh, mf) = (self.inputs.mu_hand, self.inputs.mu_foot);
        let mut c = DVector::zeros(NUM_POSE_INEQ);
        for n in 0..2 {
            let fh = f.hand(n);
            let ff = f.foot(n);
            c[n] = p.hands[n].x - p.shoulders[n].x;
            c[2 + n] = mh * mh * fh.x * fh.x - fh.y * fh.y - fh.z * fh.z;
            c[4 + n] = fh.x;
            c[6 + n] = mf * mf * ff.z * ff.z - ff.x * ff.x - ff.y * ff.y;
            c[8 + n] = ff.z;
            let dy = p.hands[n].y - po.y;
            c[10 + 2 * n] = obj.width / 2.0 - dy;
            c[11 + 2 * n] = obj.width / 2.0 + dy;
            c[14 + 2 * n] = p.hands[n].z;
            c[15 + 2 * n] = po.z + obj.height / 2.0 - p.hands[n].z;
            c[18 + n] = p.hips[n].x - p.feet[n].x;
        }
        Ok(c)
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = self.frame(x);
        let s = self.sensitivities(&f);
        let (mh, mf) = (self.inputs.mu_hand, self.inputs.mu_foot);
        let mut j = DMatrix::zeros(NUM_POSE_INEQ, NUM_POSE_VARS);
        let ex = Vector3::x();
        let ey = Vector3::y();
        let ez = Vector3::z();
        for n in 0..2 {
            let (fh, ff) = (f.hand(n), f.foot(n));
            add_point_row(&mut j, n, &ex, &s.hands[n], true);
            add_point_row(&mut j, n, &-ex, &s.shoulders[n], true);
            let h = hand_var(n);
            j[(2 + n, h)] = 2.0 * mh * mh * fh.x;
            j[(2 + n, h + 1)] = -2.0 * fh.y;
            j[(2 + n, h + 2)] = -2.0 * fh.z;
            j[(4 + n, h)] = 1.0;
            let ft = foot_var(n);
            j[(6 + n, ft)] = -2.0 * ff.x;
            j[(6 + n, ft + 1)] = -2.0 * ff.y;
            j[(6 + n, ft + 2)] = 2.0 * mf * mf * ff.z;
            j[(8 + n, ft + 2)] = 1.0;
            add_point_row(&mut j, 10 + 2 * n, &-ey, &s.hands[n], true);
            add_point_row(&mut j, 11 + 2 * n, &ey, &s.hands[n], true);
            add_point_row(&mut j, 14 + 2 * n, &ez, &s.hands[n], true);
            add_point_row(&mut j, 15 + 2 * n, &-ez, &s.hands[n], true);
            add_point_row(&mut j, 18 + n, &ex, &s.hips[n], true);
            add_point_row(&mut j, 18 + n, &-ex, &s.feet[n], true);
        }
        Ok(j)
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn initial_guess(&self) -> DVector<f64> {
        self.standing_guess()
    }
}

/// `count` seeded random setups: box sides in [0.3, 1] m, mass in [1, 20] kg,
/// ground friction in [0.2, 0.7].
pub fn random_setups(model: &RobotModel, seed: u64, count: usize) -> Vec<PoseProblemInputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let object = ObjectParams {
                length: rng.gen_range(0.3..=1.0),
                width: rng.gen_range(0.3..=1.0),
                height: rng.gen_range(0.3..=1.0),
                mass: rng.gen_range(1.0..=20.0),
                ground_friction: rng.gen_range(0.2..=0.7),
                inertia: None,
            };
            PoseProblemInputs::in_front_of(
                model,
                object,
                DEFAULT_GAP,
                DEFAULT_MU_FOOT,
                DEFAULT_MU_HAND,
            )
        })
        .collect()
}

/// Builds the pose NLP after validating inputs and checking reachability.
pub fn build_pose_nlp(inputs: &PoseProblemInputs, model: &RobotModel) -> Result<PoseNlp> {
    PoseNlp::new(inputs.clone(), model.clone())
}

/// Optimal steady-state pushing pose. All vectors are in the pushing frame;
/// use [`PoseSolution::to_world`] for world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSolution {
    pub euler: Vector3<f64>,
    pub joints: [f64; NUM_JOINTS],
    pub com: Vector3<f64>,
    pub input: ControlInput,
    pub hands: [Vector3<f64>; 2],
    pub feet: [Vector3<f64>; 2],
    /// Reference hand forces (equal to `input.hand_forces`).
    pub hand_force_ref: [Vector3<f64>; 2],
    pub object_position: Vector3<f64>,
    pub object_yaw: f64,
    pub steady_state: SteadyStateResidual,
    /// Objective in the solver's scaling (divided by the squared robot weight).
    pub objective: f64,
    pub kkt: KktResiduals,
    pub report: SolveReport,
}

impl PoseSolution {
    /// Maps a pushing-frame point to world coordinates.
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.object_position + rot_z(self.object_yaw) * (p - self.object_position)
    }

    pub fn total_hand_force(&self) -> Vector3<f64> {
        self.input.hand_forces[0] + self.input.hand_forces[1]
    }

    /// CoM x relative to the mean foot x; positive means leaning into the push.
    pub fn forward_offset(&self) -> f64 {
        self.com.x - 0.5 * (self.feet[0].x + self.feet[1].x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Options for [`solve_pose`]; constraint tolerance is tighter than the KKT
/// tolerance so the steady-state residual lands well inside its target.
pub fn pose_nlp_options() -> NlpOptions {
    NlpOptions {
        tol: 1e-6,
        constraint_tol: 1e-9,
        max_iter: 2000,
        hessian_floor: 1e-8,
    }
}

/// Solves the pose NLP. A non-converged solve is still returned (best iterate
/// and residuals in `report`); an infeasible one becomes `Error::Unreachable`.
pub fn solve_pose(inputs: &PoseProblemInputs, model: &RobotModel) -> Result<PoseSolution> {
    let nlp = build_pose_nlp(inputs, model)?;
    let sol = solve_nlp(&nlp, &pose_nlp_options())?;
    if sol.report.status == SolveStatus::Infeasible {
        return Err(diagnose(&nlp, &sol.x));
    }
    let (base, joints, input) = nlp.unpack(&sol.x);
    let pts = body_points(model, &base, &joints);
    let steady = steady_state_residual(
        model,
        &inputs.object,
        &nlp.object_position,
        &base,
        &joints,
        &input,
    );
    Ok(PoseSolution {
        euler: base.euler,
        joints,
        com: base.position,
        input,
        hands: pts.hands,
        feet: pts.feet,
        hand_force_ref: input.hand_forces,
        object_position: nlp.object_position,
        object_yaw: inputs.object_yaw,
        steady_state: steady,
        objective: sol.objective,
        kkt: sol.residuals,
        report: sol.report,
    })
}

/// Unoptimized pushing pose for ablations: upright trunk at the reference
/// height, hands on the near face level with the shoulders (clamped to the
/// face), arms extended to 80% of their reach, standing legs, and forces that
/// only balance the push horizontally and the weight vertically.
pub fn nominal_pose(inputs: &PoseProblemInputs, model: &RobotModel) -> Result<PoseSolution> {
    inputs.validate()?;
    model.validate()?;
    let (p_o, com_ref) = inputs.local();
    let obj = &inputs.object;
    let face_x = p_o.x - obj.length / 2.0;
    let bottom = p_o.z - obj.height / 2.0;
    let mut q = model.standing_configuration();
    let shoulder = model.shoulder_offset(Side::Left);
    let hand_z =
        (com_ref.z + shoulder.z).clamp(bottom + 0.1 * obj.height, bottom + 0.9 * obj.height);
    let hand_y = shoulder.y.min(0.4 * obj.width);
    let dz = hand_z - com_ref.z - shoulder.z;
    let dy = hand_y - shoulder.y;
    let dx = ((0.8 * model.arm_reach()).powi(2) - dz * dz - dy * dy)
        .max(0.0025)
        .sqrt();
    let com = Vector3::new(face_x - dx, p_o.y, com_ref.z);
    let base = BasePose::new(com, Vector3::zeros());
    let mut hands = [Vector3::zeros(); 2];
    for side in Side::BOTH {
        let n = side.index();
        hands[n] = Vector3::new(face_x, p_o.y + side.sign() * hand_y, hand_z);
        let seed = q;
        let (sol, err) = solve_limb_ik(model, &base, Limb::Arm(side), &hands[n], &seed, &seed);
        if err > 1e-6 {
            return Err(Error::Unreachable {
                family: "hand_on_face",
                detail: format!("nominal arm IK error {err:.3e}"),
            });
        }
        q = sol;
    }
    let push = obj.friction_force() / 2.0;
    let mut input = ControlInput::default();
    for n in 0..2 {
        input.hand_forces[n] = Vector3::new(push, 0.0, 0.0);
        input.foot_forces[n] = Vector3::new(push, 0.0, model.mass * GRAVITY / 2.0);
    }
    let pts = body_points(model, &base, &q);
    Ok(PoseSolution {
        euler: base.euler,
        joints: q,
        com,
        input,
        hands: pts.hands,
        feet: pts.feet,
        hand_force_ref: input.hand_forces,
        object_position: p_o,
        object_yaw: inputs.object_yaw,
        steady_state: steady_state_residual(model, obj, &p_o, &base, &q, &input),
        objective: f64::NAN,
        kkt: KktResiduals::default(),
        report: SolveReport::immediate(SolveStatus::Optimal),
    })
}

fn diagnose(nlp: &PoseNlp, x: &DVector<f64>) -> Error {
    let ce = nlp
        .eq_constraints(x)
        .unwrap_or_else(|_| DVector::zeros(NUM_POSE_EQ));
    let ci = nlp
        .ineq_constraints(x)
        .unwrap_or_else(|_| DVector::zeros(NUM_POSE_INEQ));
    let mut worst = (0.0, ConstraintFamily::HandOnFace);
    for (i, v) in ce.iter().enumerate() {
        if v.abs() > worst.0 {
            worst = (v.abs(), ConstraintFamily::of_equality(i));
        }
    }
    for (i, v) in ci.iter().enumerate() {
        if -v > worst.0 {
            worst = (-v, ConstraintFamily::of_inequality(i));
        }
    }
    Error::Unreachable {
        family: worst.1.name(),
        detail: format!("largest violation {:.3e}", worst.0),
    }
}
