use locomanip::dynamics::{ObjectParams, GRAVITY};
use locomanip::kinematics::{forward_kinematics, BasePose, RobotModel};
use locomanip::pose_opt::*;
use locomanip::solvers::{nlp_kkt_residuals, solve_nlp, SolveStatus};
use nalgebra::Vector3;

fn model() -> RobotModel {
    RobotModel::default()
}

fn setup(side: f64, mass: f64, mu_g: f64) -> PoseProblemInputs {
    let m = model();
    PoseProblemInputs::in_front_of(
        &m,
        ObjectParams::cube(side, mass, mu_g),
        DEFAULT_GAP,
        DEFAULT_MU_FOOT,
        DEFAULT_MU_HAND,
    )
}

fn solve(inputs: &PoseProblemInputs) -> PoseSolution {
    let sol = solve_pose(inputs, &model()).unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal, "{:?}", sol.report);
    sol
}

/// Zero-acceleration Newton-Euler balance rebuilt from forward kinematics.
/// Returns the largest force and moment residual in N and N m.
fn balance_oracle(inputs: &PoseProblemInputs, sol: &PoseSolution) -> (f64, f64) {
    let m = model();
    let base = BasePose::new(sol.com, sol.euler);
    let pts = forward_kinematics(&m, &base, &sol.joints).unwrap();
    let u = &sol.input;
    let obj = &inputs.object;
    let fric = obj.ground_friction * obj.mass * GRAVITY;

    let mut f_robot = Vector3::new(0.0, 0.0, -m.mass * GRAVITY);
    let mut m_robot = Vector3::zeros();
    let mut f_obj = Vector3::new(-fric, 0.0, 0.0);
    let mut m_obj = Vector3::new(0.0, -0.5 * obj.height * fric, 0.0);
    for n in 0..2 {
        let (fh, ff) = (u.hand_forces[n], u.foot_forces[n]);
        // foot moments act about y and z
        let mf = Vector3::new(0.0, u.foot_moments[n].x, u.foot_moments[n].y);
        f_robot += ff - fh;
        m_robot += (pts.feet[n] - sol.com).cross(&ff) + mf - (pts.hands[n] - sol.com).cross(&fh);
        f_obj += fh;
        m_obj += (pts.hands[n] - sol.object_position).cross(&fh);
    }
    let force = f_robot.amax().max(f_obj.x.abs()).max(f_obj.y.abs());
    (force, m_robot.amax().max(m_obj.amax()))
}

#[test]
fn negligible_object_leaves_robot_weight_on_the_feet() {
    let sol = solve(&setup(0.5, 0.01, 0.2));
    for f in &sol.hand_force_ref {
        assert!(f.norm() <= 1.0, "hand force {f}");
    }
    let grf: f64 = sol.input.foot_forces.iter().map(|f| f.z).sum();
    assert!((grf - 166.77).abs() <= 1e-3, "vertical GRF {grf}");
}

#[test]
fn cube_pose_puts_hands_on_the_near_face_and_leans_forward() {
    let inputs = setup(0.5, 10.0, 0.4);
    let sol = solve(&inputs);
    let face = inputs.object_position.x - 0.25;
    for h in &sol.hands {
        assert!((h.x - face).abs() <= 1e-6, "hand x {} face {face}", h.x);
        assert!(h.z >= 0.0 && h.z <= 0.5 + 1e-9);
        assert!(h.y.abs() <= 0.25 + 1e-9);
    }
    assert!(
        sol.forward_offset() > 0.0,
        "offset {}",
        sol.forward_offset()
    );
    for f in &sol.feet {
        assert!(f.z.abs() <= 1e-6);
    }
}

#[test]
fn pushing_force_matches_ground_friction() {
    let sol = solve(&setup(0.5, 10.0, 0.5));
    assert!(
        (sol.total_hand_force().x - 49.05).abs() <= 1e-4,
        "{}",
        sol.total_hand_force().x
    );
}

#[test]
fn solution_is_symmetric_and_balanced() {
    let inputs = setup(0.5, 10.0, 0.4);
    let sol = solve(&inputs);
    assert!(sol.euler.z.abs() <= 1e-3, "yaw {}", sol.euler.z);
    let gap = (sol.hand_force_ref[0] - sol.hand_force_ref[1]).amax();
    assert!(gap <= 1e-4, "left/right gap {gap}");
    assert!(sol.steady_state.object_moment.y.abs() <= 1e-6);
    assert!(sol.steady_state.scaled_max(&model()) <= STEADY_STATE_TOL);

    let (force, moment) = balance_oracle(&inputs, &sol);
    let w = model().mass * GRAVITY;
    assert!(
        force / w <= 1e-6 && moment / w <= 1e-6,
        "oracle residuals {force} {moment}"
    );
    let grf: f64 = sol.input.foot_forces.iter().map(|f| f.z).sum();
    let hands_z: f64 = sol.input.hand_forces.iter().map(|f| f.z).sum();
    assert!((grf - hands_z - w).abs() <= 1e-4);
}

#[test]
fn independent_kkt_check_passes() {
    let inputs = setup(0.6, 8.0, 0.45);
    let m = model();
    let nlp = build_pose_nlp(&inputs, &m).unwrap();
    let sol = solve_nlp(&nlp, &pose_nlp_options()).unwrap();
    assert_eq!(sol.report.status, SolveStatus::Optimal);
    let r = nlp_kkt_residuals(&nlp, &sol.x, &sol.multipliers).unwrap();
    assert!(r.max() <= 1e-6, "{r:?}");
}

#[test]
fn forward_offset_grows_with_object_mass() {
    let offsets: Vec<f64> = [5.0, 10.0, 15.0, 20.0]
        .iter()
        .map(|&m| solve(&setup(0.5, m, 0.4)).forward_offset())
        .collect();
    for w in offsets.windows(2) {
        assert!(w[1] >= w[0] - 1e-4, "{offsets:?}");
    }
}

#[test]
fn doubling_ground_friction_doubles_the_push() {
    let a = solve(&setup(0.5, 10.0, 0.25)).total_hand_force().x;
    let b = solve(&setup(0.5, 10.0, 0.5)).total_hand_force().x;
    assert!((b - 2.0 * a).abs() <= 1e-4, "{a} {b}");
}

#[test]
fn uniform_weight_scaling_keeps_the_argmax() {
    let base = setup(0.5, 10.0, 0.4);
    let sol = solve(&base);
    let solve_scaled = |k: f64| {
        let mut scaled = base.clone();
        scaled.weights = base.weights.scaled(k);
        solve(&scaled)
    };
    // exact in floating point, so the whole solution must repeat
    for k in [0.25, 8.0] {
        let other = solve_scaled(k);
        assert!((other.com - sol.com).amax() <= 1e-12);
        assert!((other.euler - sol.euler).amax() <= 1e-12);
        assert!(other
            .joints
            .iter()
            .zip(&sol.joints)
            .all(|(a, b)| (a - b).abs() <= 1e-12));
    }
    // rounding in the weights moves the pose along the flat valley, not the forces
    for k in [0.1, 10.0] {
        let other = solve_scaled(k);
        assert!((other.total_hand_force() - sol.total_hand_force()).amax() <= 1e-9);
        assert!((other.objective - sol.objective).abs() <= 1e-9);
        assert!((other.com - sol.com).amax() <= 1e-2);
    }
}

#[test]
fn rotated_object_maps_back_to_world() {
    let mut inputs = setup(0.5, 10.0, 0.4);
    let straight = solve(&inputs);
    let yaw = 0.7;
    let centre = inputs.object_position;
    let robot = Vector3::new(0.0, 0.0, inputs.com_ref.z);
    inputs.object_yaw = yaw;
    inputs.com_ref = centre + locomanip::math::rot_z(yaw) * (robot - centre);
    let turned = solve(&inputs);
    assert!((turned.com - straight.com).amax() <= 1e-5);
    let w = turned.to_world(&turned.hands[0]);
    let expected = centre + locomanip::math::rot_z(yaw) * (straight.hands[0] - centre);
    assert!((w - expected).amax() <= 1e-5);
}

#[test]
fn solution_round_trips_through_a_file() {
    let sol = solve(&setup(0.5, 10.0, 0.4));
    let dir = std::env::temp_dir().join(format!("pose-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("pose.toml");
    sol.save(&path).unwrap();
    let back = PoseSolution::load(&path).unwrap();
    assert!((back.com - sol.com).amax() <= 1e-12);
    assert_eq!(back.report.status, sol.report.status);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seeded_setups_are_reproducible_and_in_range() {
    let m = model();
    let a = random_setups(&m, 7, 20);
    assert_eq!(a, random_setups(&m, 7, 20));
    for s in &a {
        let o = &s.object;
        for d in [o.length, o.width, o.height] {
            assert!((0.3..=1.0).contains(&d));
        }
        assert!((1.0..=20.0).contains(&o.mass));
        assert!((0.2..=0.7).contains(&o.ground_friction));
    }
}

#[test]
fn far_object_reports_the_hand_on_face_family() {
    let m = model();
    let inputs =
        PoseProblemInputs::in_front_of(&m, ObjectParams::cube(0.5, 10.0, 0.4), 3.0, 0.7, 0.6);
    match solve_pose(&inputs, &m) {
        Err(locomanip::Error::Unreachable { family, .. }) => assert_eq!(family, "hand_on_face"),
        other => panic!("expected unreachable, got {other:?}"),
    }
}
