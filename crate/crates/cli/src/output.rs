use std::path::Path;

use anyhow::Result;
use locomanip::kinematics::NUM_JOINTS;
use locomanip::pose_opt::{PoseProblemInputs, PoseSolution};
use locomanip::sim::{write_log_csv, Ablation, Scenario, SimRun};

/// Writes the full log, the summary and the plot series for one run. Returns
/// the file names relative to `dir`.
pub fn write_run(dir: &Path, sc: &Scenario, run: &SimRun) -> Result<Vec<String>> {
    let log = format!("{}.csv", sc.name);
    let summary = format!("{}_summary.toml", sc.name);
    let plot = format!("{}_plot.csv", sc.name);
    write_log_csv(dir.join(&log), &run.log)?;
    run.summary.save(dir.join(&summary))?;
    write_plot(&dir.join(&plot), sc, run)?;
    Ok(vec![log, summary, plot])
}

pub fn plot_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "yaw",
        "yaw_cmd",
        "yaw_error",
        "vo_x",
        "vo_y",
        "vc_x",
        "vc_y",
        "v_cmd_x",
        "v_cmd_y",
        "fh_l_push",
        "fh_l_lateral",
        "fh_l_z",
        "fh_r_push",
        "fh_r_lateral",
        "fh_r_z",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..NUM_JOINTS).map(|j| format!("tau_{j}")));
    h
}

/// Yaw, velocity, hand-force (object frame) and torque time series.
fn write_plot(path: &Path, sc: &Scenario, run: &SimRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(plot_header())?;
    for rec in &run.log {
        let x = &rec.state;
        let yaw = x.object_euler.z;
        let v_cmd = sc.command.velocity_at(rec.t);
        let (s, c) = yaw.sin_cos();
        let mut row = vec![
            rec.t,
            yaw,
            yaw - rec.yaw_error,
            rec.yaw_error,
            x.object_velocity.x,
            x.object_velocity.y,
            x.robot_velocity.x,
            x.robot_velocity.y,
            v_cmd.x,
            v_cmd.y,
        ];
        for f in &rec.applied.hand_forces {
            row.extend([c * f.x + s * f.y, -s * f.x + c * f.y, f.z]);
        }
        row.extend(rec.tau);
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison(path: &Path, runs: &[(Ablation, SimRun)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "success",
        "failure",
        "end_time",
        "max_object_yaw",
        "steady_object_velocity_error",
        "max_tau",
        "hand_slip_ticks",
    ])?;
    for (ablation, run) in runs {
        let s = &run.summary;
        w.write_record([
            ablation.name().to_string(),
            s.success.to_string(),
            s.failure.clone().unwrap_or_default(),
            s.end_time.to_string(),
            s.max_object_yaw.to_string(),
            s.steady_object_velocity_error.to_string(),
            s.max_tau.to_string(),
            s.hand_slip_ticks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(
    path: &Path,
    setups: &[PoseProblemInputs],
    results: &[locomanip::Result<PoseSolution>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "setup",
        "length",
        "width",
        "height",
        "mass",
        "ground_friction",
        "status",
        "iterations",
        "solve_ms",
        "kkt_stationarity",
        "forward_offset",
        "error",
    ])?;
    for (k, (inputs, r)) in setups.iter().zip(results).enumerate() {
        let o = &inputs.object;
        let mut row = vec![
            k.to_string(),
            o.length.to_string(),
            o.width.to_string(),
            o.height.to_string(),
            o.mass.to_string(),
            o.ground_friction.to_string(),
        ];
        match r {
            Ok(sol) => row.extend([
                sol.report.status.to_string(),
                sol.report.iterations.to_string(),
                sol.report.solve_time_ms.to_string(),
                sol.report.stationarity.to_string(),
                sol.forward_offset().to_string(),
                String::new(),
            ]),
            Err(e) => row.extend([
                "error".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ]),
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
