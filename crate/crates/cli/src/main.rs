mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use locomanip::dynamics::ObjectParams;
use locomanip::kinematics::RobotModel;
use locomanip::pose_opt::{
    random_setups, solve_pose, PoseProblemInputs, PoseSolution, DEFAULT_GAP, DEFAULT_MU_FOOT,
    DEFAULT_MU_HAND,
};
use locomanip::sim::{run_scenario, Ablation, Disturbance, Mismatch, Scenario, SimRun};
use locomanip::solvers::SolveStatus;
use rayon::prelude::*;

use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "locomanip", version = env!("LOCOMANIP_VERSION"), about = "Humanoid box-pushing pose optimization and MPC simulation")]
struct Cli {
    /// Scenario TOML; defaults to the command's built-in preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Robot model TOML; defaults to the built-in model.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized setups.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Plant mismatch in percent: "mass,friction,inertia".
    #[arg(long, global = true)]
    mismatch: Option<String>,
    /// Extra object disturbance "t0,dur,fx,fy,fz"; repeatable.
    #[arg(long, global = true)]
    disturb: Vec<String>,
    /// Override the simulated duration (s).
    #[arg(long, global = true)]
    duration: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the pushing pose for the configured object, or the three reference setups.
    Pose {
        /// Solve N seeded random setups in parallel instead.
        #[arg(long)]
        sweep: Option<usize>,
    },
    /// Run one scenario.
    Sim {
        #[arg(long, default_value = "nominal")]
        preset: String,
    },
    /// Run the four controller variants on the same task.
    Compare,
    /// Push with a lateral impulse on the object.
    Disturb,
    /// Push through a 90 degree turn.
    Turn3d,
    /// Re-run the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pose { .. } => "pose",
            Command::Sim { .. } => "sim",
            Command::Compare => "compare",
            Command::Disturb => "disturb",
            Command::Turn3d => "turn3d",
            Command::Replay { .. } => "replay",
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&args);
    if let Err(e) = run(cli, args) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        let recorded = RunManifest::load(manifest)?;
        let mut replayed = Cli::try_parse_from(&recorded.args)?;
        if matches!(replayed.command, Command::Replay { .. }) {
            bail!("manifest records a replay; refusing to recurse");
        }
        replayed.out = cli.out.clone().or(Some(recorded.out_dir.clone()));
        let mut args = recorded.args.clone();
        if let Some(out) = &cli.out {
            args.extend(["--out".to_string(), out.display().to_string()]);
        }
        return run(replayed, args);
    }
    let model = match &cli.model {
        Some(p) => RobotModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        None => RobotModel::default(),
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::new(
        cli.command.name(),
        args,
        cli.config.clone(),
        cli.seed,
        out.clone(),
    );
    let result = match &cli.command {
        Command::Pose { sweep: Some(n) } => cmd_sweep(&model, *n, cli.seed, &mut manifest),
        Command::Pose { sweep: None } => cmd_pose(&cli, &model, &mut manifest),
        Command::Sim { preset } => cmd_sim(&cli, &model, preset, &mut manifest),
        Command::Compare => cmd_compare(&cli, &model, &mut manifest),
        Command::Disturb => cmd_disturb(&cli, &model, &mut manifest),
        Command::Turn3d => cmd_sim(&cli, &model, "turn3d", &mut manifest),
        Command::Replay { .. } => unreachable!(),
    };
    // the manifest is written even when the command fails
    manifest.save()?;
    result
}

fn timed<T>(manifest: &mut RunManifest, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let v = f();
    manifest
        .timings_ms
        .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
    v
}

fn parse_mismatch(s: &str) -> Result<Mismatch> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("mismatch '{s}'"))?;
    let [mass_pct, friction_pct, inertia_pct] = v[..] else {
        bail!("mismatch '{s}' must be mass,friction,inertia percentages");
    };
    let m = Mismatch {
        mass_pct,
        friction_pct,
        inertia_pct,
    };
    m.validate()?;
    Ok(m)
}

/// The configured scenario, or `preset`, with command-line overrides applied.
fn scenario(cli: &Cli, preset: &str) -> Result<Scenario> {
    let mut sc = match &cli.config {
        Some(p) => {
            Scenario::load(p).with_context(|| format!("loading scenario {}", p.display()))?
        }
        None => Scenario::preset(preset)?,
    };
    if let Some(m) = &cli.mismatch {
        sc.sim.mismatch = parse_mismatch(m)?;
    }
    for d in &cli.disturb {
        sc.sim
            .disturbances
            .push(Disturbance::parse(d, sc.object.length)?);
    }
    if let Some(t) = cli.duration {
        sc.sim.duration = t;
        sc.sim.steady_start = sc.sim.steady_start.min(0.5 * t);
    }
    sc.validate()?;
    Ok(sc)
}

fn simulate(
    model: &RobotModel,
    sc: &Scenario,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<SimRun> {
    log::info!("running {}", sc.name);
    std::fs::write(
        out.join(format!("{}_scenario.toml", sc.name)),
        sc.to_toml()?,
    )?;
    let run = timed(manifest, &sc.name, || run_scenario(model, sc))?;
    manifest
        .timings_ms
        .insert(format!("{}_mpc_mean", sc.name), run.timing.mpc_mean_ms);
    manifest
        .timings_ms
        .insert(format!("{}_mpc_max", sc.name), run.timing.mpc_max_ms);
    let files = output::write_run(out, sc, &run)?;
    manifest.outputs.push(format!("{}_scenario.toml", sc.name));
    manifest.outputs.extend(files);
    Ok(run)
}

fn print_summary(run: &SimRun) {
    let s = &run.summary;
    let status = match &s.failure {
        None => "success".to_string(),
        Some(r) => format!("FAILED at t = {:.3} s: {r}", s.end_time),
    };
    println!("{}: {status}", s.scenario);
    println!(
        "  steady |v - v_des|   robot {:.4} m/s, object {:.4} m/s",
        s.steady_velocity_error, s.steady_object_velocity_error
    );
    println!(
        "  object yaw           max {:.4} rad, max error {:.4}, final error {:.4}",
        s.max_object_yaw, s.max_yaw_error, s.final_yaw_error
    );
    println!(
        "  torque               max {:.2} N m (excess {:.2}), saturated ticks {}",
        s.max_tau, s.max_tau_excess, s.saturation_ticks
    );
    println!(
        "  mpc                  {} solves, mean {:.2} ms, max kkt {:.2e}, backoffs {}",
        s.mpc_solves, run.timing.mpc_mean_ms, s.mpc_max_kkt, s.mpc_backoffs
    );
    println!(
        "  events               tip risk {}, foot cone {}, hand slip {}",
        s.tip_risk_ticks, s.foot_cone_ticks, s.hand_slip_ticks
    );
}

fn fail_on(run: &SimRun) -> Result<()> {
    match &run.summary.failure {
        Some(reason) => bail!(
            "scenario {} failed at t = {:.3} s: {reason}",
            run.summary.scenario,
            run.summary.end_time
        ),
        None => Ok(()),
    }
}

fn cmd_sim(cli: &Cli, model: &RobotModel, preset: &str, manifest: &mut RunManifest) -> Result<()> {
    let sc = scenario(cli, preset)?;
    let out = manifest.out_dir.clone();
    let run = simulate(model, &sc, &out, manifest)?;
    print_summary(&run);
    fail_on(&run)
}

fn cmd_disturb(cli: &Cli, model: &RobotModel, manifest: &mut RunManifest) -> Result<()> {
    let sc = scenario(cli, "disturb")?;
    let out = manifest.out_dir.clone();
    let run = simulate(model, &sc, &out, manifest)?;
    print_summary(&run);
    let s = &run.summary;
    match s.recovery_time {
        Some(t) => println!("  recovery time        {t:.3} s"),
        None => println!("  recovery time        not recovered"),
    }
    if let (Some(l), Some(r)) = (s.impulse_left_min, s.impulse_right_max) {
        println!(
            "  impulse hand force   left min {l:.1} N, right max {r:.1} N (reference {:.1} N)",
            s.reference_hand_force
        );
    }
    fail_on(&run)
}

fn cmd_compare(cli: &Cli, model: &RobotModel, manifest: &mut RunManifest) -> Result<()> {
    let base = scenario(cli, "compare")?;
    let out = manifest.out_dir.clone();
    let mut runs = Vec::new();
    for ablation in Ablation::ALL {
        let run = simulate(model, &ablation.apply(&base), &out, manifest)?;
        runs.push((ablation, run));
    }
    output::write_comparison(&out.join("comparison.csv"), &runs)?;
    manifest.outputs.push("comparison.csv".into());
    println!(
        "{:<24} {:<8} {:>12} {:>12} {:>10}  failure",
        "variant", "result", "max |yaw|", "v_o error", "max tau"
    );
    for (ablation, run) in &runs {
        let s = &run.summary;
        println!(
            "{:<24} {:<8} {:>12.4} {:>12.4} {:>10.2}  {}",
            ablation.name(),
            if s.success { "success" } else { "failed" },
            s.max_object_yaw,
            s.steady_object_velocity_error,
            s.max_tau,
            s.failure.as_deref().unwrap_or("-")
        );
    }
    let full = &runs
        .iter()
        .find(|(a, _)| *a == Ablation::Full)
        .expect("full variant")
        .1;
    fail_on(full)
}

/// Setups used in the paper's pose figures: (mass kg, side m, ground friction).
const REFERENCE_SETUPS: [(f64, f64, f64); 3] =
    [(5.0, 0.3, 0.7), (10.0, 0.5, 0.4), (15.0, 0.7, 0.5)];

fn cmd_pose(cli: &Cli, model: &RobotModel, manifest: &mut RunManifest) -> Result<()> {
    let setups: Vec<(String, PoseProblemInputs)> = match &cli.config {
        Some(_) => {
            let sc = scenario(cli, "nominal")?;
            vec![(sc.name.clone(), sc.pose_inputs(model))]
        }
        None => REFERENCE_SETUPS
            .iter()
            .map(|&(m, side, mu)| {
                let obj = ObjectParams::cube(side, m, mu);
                (
                    format!("cube_{side}m_{m}kg"),
                    PoseProblemInputs::in_front_of(
                        model,
                        obj,
                        DEFAULT_GAP,
                        DEFAULT_MU_FOOT,
                        DEFAULT_MU_HAND,
                    ),
                )
            })
            .collect(),
    };
    for (name, inputs) in &setups {
        let sol = timed(manifest, name, || solve_pose(inputs, model))
            .with_context(|| format!("pose {name}"))?;
        print_pose(name, &sol, model);
        let file = format!("pose_{name}.toml");
        sol.save(manifest.out_dir.join(&file))?;
        manifest.outputs.push(file);
        if sol.report.status != SolveStatus::Optimal {
            bail!("pose {name} did not converge: {}", sol.report.status);
        }
    }
    Ok(())
}

fn print_pose(name: &str, sol: &PoseSolution, model: &RobotModel) {
    let e = sol.euler;
    println!("{name}: {}", sol.report.status);
    println!(
        "  euler [roll pitch yaw]  [{:.4} {:.4} {:.4}] rad",
        e.x, e.y, e.z
    );
    println!(
        "  CoM forward shift       {:.4} m (height {:.4} m)",
        sol.forward_offset(),
        sol.com.z
    );
    println!(
        "  hand heights            left {:.4} m, right {:.4} m",
        sol.hands[0].z, sol.hands[1].z
    );
    for (n, f) in sol.hand_force_ref.iter().enumerate() {
        println!(
            "  hand force ref {}        [{:.2} {:.2} {:.2}] N",
            ["L", "R"][n],
            f.x,
            f.y,
            f.z
        );
    }
    println!(
        "  steady-state residual   {:.2e} (scaled)",
        sol.steady_state.scaled_max(model)
    );
    println!(
        "  solve time              {:.1} ms ({} iterations)",
        sol.report.solve_time_ms, sol.report.iterations
    );
}

fn cmd_sweep(
    model: &RobotModel,
    count: usize,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<()> {
    let setups = random_setups(model, seed, count);
    let results: Vec<_> = timed(manifest, "sweep", || {
        setups
            .par_iter()
            .map(|inputs| solve_pose(inputs, model))
            .collect()
    });
    output::write_sweep(&manifest.out_dir.join("sweep.csv"), &setups, &results)?;
    manifest.outputs.push("sweep.csv".into());
    let mut times: Vec<f64> = results
        .iter()
        .flatten()
        .map(|s| s.report.solve_time_ms)
        .collect();
    times.sort_by(f64::total_cmp);
    let optimal = results
        .iter()
        .flatten()
        .filter(|s| s.report.status == SolveStatus::Optimal)
        .count();
    let median = if times.is_empty() {
        f64::NAN
    } else {
        times[times.len() / 2]
    };
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    println!(
        "{optimal}/{count} setups optimal; solve time median {median:.1} ms, mean {mean:.1} ms"
    );
    for (k, r) in results.iter().enumerate() {
        if let Err(e) = r {
            println!("  setup {k}: {e}");
        }
    }
    if optimal < count {
        bail!("{} of {count} setups did not solve", count - optimal);
    }
    Ok(())
}
