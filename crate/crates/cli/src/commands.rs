use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use tapegrip_core::config::{mechanics_fragment, ConfigError};
use tapegrip_core::control::{follow_path, write_trace, ControlError, PathAbort, PathShape, PathSpec, TraceSample};
use tapegrip_core::mechanics::{
    fit_buckling, fit_spring, fit_torque, read_samples, BucklingModel, MechanicsError, BUCKLING_HEADER,
    SPRING_HEADER, TORQUE_HEADER,
};
use tapegrip_core::protocol::{ErrorCode, PROTOCOL_VERSION};
use tapegrip_core::scenario::{load_scenario, run_scenario, ScenarioError, ScenarioRun};
use tapegrip_core::sim::{InitialPose, SimError, Simulator};
use tapegrip_core::workspace::{compute_workspace_at, export_heatmap, WorkspaceError};
use tapegrip_core::{load_config, Side, SimConfig, Vec2};
use tapegrip_teleop::{ServeError, ServeOptions, Server};

use crate::{FitModel, ShapeArg, SideArg};

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const USAGE: u8 = 1;
pub const IO: u8 = 2;
pub const KINEMATICS: u8 = 3;
pub const EVENT: u8 = 4;
pub const FIT: u8 = 5;

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, anyhow!(message.into()))
    }
}

fn config_failure(e: ConfigError) -> Failure {
    let code = if matches!(e, ConfigError::Io { .. }) { IO } else { USAGE };
    Failure::new(code, e)
}

fn load(config: Option<PathBuf>) -> Result<SimConfig, Failure> {
    match config {
        None => Ok(SimConfig::default()),
        Some(p) => load_config(p).map_err(config_failure),
    }
}

fn side(s: SideArg) -> Side {
    match s {
        SideArg::Left => Side::Left,
        SideArg::Right => Side::Right,
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::new(IO, anyhow!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn workspace(config: Option<PathBuf>, resolution: f64, width: Option<f64>, out: &Path) -> Result<(), Failure> {
    let cfg = load(config)?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Failure::usage(format!("--resolution must be a positive length, got {resolution}")));
    }
    let g = &cfg.geometry;
    let a = match width {
        None => g.a_mid(),
        Some(w) if w >= g.width_min() && w <= g.width_max() => g.a_for_width(w),
        Some(w) => {
            return Err(Failure::usage(format!(
                "--width {w} outside [{}, {}] mm",
                g.width_min(),
                g.width_max()
            )))
        }
    };
    let map = compute_workspace_at(g, &cfg.mechanics.buckling, resolution, a).map_err(|e| match e {
        WorkspaceError::Io(_) | WorkspaceError::Csv(_) => Failure::new(IO, e),
        other => Failure::new(USAGE, other),
    })?;
    export_heatmap(&map, out).map_err(|e| Failure::new(IO, anyhow!("cannot write {}: {e}", out.display())))?;
    println!("grid {} x {} cells of {} mm, grip width {} mm", map.nx, map.ny, resolution, g.width_for(a));
    println!(
        "reachable area: left {:.1} mm^2, right {:.1} mm^2, both {:.1} mm^2",
        map.reach_area(Side::Left),
        map.reach_area(Side::Right),
        map.grip_area()
    );
    match map.grip_force_range() {
        Some((min, max)) => println!("F_grip: max {max:.4} N, min {min:.4} N"),
        None => println!("F_grip: no cell reachable by both appendages"),
    }
    Ok(())
}

fn control_failure(e: ControlError) -> Failure {
    let code = match &e {
        ControlError::Kinematics(_) | ControlError::Sim(SimError::Kinematics(_)) => KINEMATICS,
        ControlError::InvalidParams(_) => USAGE,
        _ => KINEMATICS,
    };
    Failure::new(code, e)
}

#[allow(clippy::too_many_arguments)]
pub fn trace(
    config: Option<PathBuf>,
    shape: ShapeArg,
    size: f64,
    loops: u32,
    side_arg: SideArg,
    center: (f64, f64),
    speed: Option<f64>,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = load(config)?;
    if !(size > 0.0 && size.is_finite()) {
        return Err(Failure::usage(format!("--size must be a positive length, got {size}")));
    }
    let shape = match shape {
        ShapeArg::Square => PathShape::Square,
        ShapeArg::Triangle => PathShape::Triangle,
        ShapeArg::Circle => PathShape::Circle,
        ShapeArg::Star => PathShape::Star,
    };
    let speed = speed.unwrap_or(cfg.motion.tip_speed);
    let waypoints = shape.waypoints(Vec2::new(center.0, center.1), size);
    let start = waypoints[0];
    let spec = PathSpec { waypoints, speeds: vec![speed], loops };
    let mut sim = Simulator::new(cfg, &InitialPose::default()).map_err(|e| Failure::new(USAGE, e))?;
    let side = side(side_arg);
    let (trace, failure) = match follow_path(&mut sim, side, &spec) {
        Ok(t) => (t, None),
        Err(PathAbort { error, trace }) => (trace, Some(control_failure(error))),
    };
    write_file(out, |w| write_trace(&trace, w).map_err(std::io::Error::other))?;
    if let Some(f) = failure {
        return Err(f);
    }
    print_trace_summary(&trace, start);
    Ok(())
}

fn print_trace_summary(trace: &[TraceSample], start: Vec2) {
    let tracking = trace.iter().filter(|s| s.loop_index > 0).map(TraceSample::error).fold(0.0, f64::max);
    println!("{} samples, max tracking error {:.3e} mm", trace.len(), tracking);
    let mut k = 0;
    while k < trace.len() {
        let lp = trace[k].loop_index;
        let end = trace[k..].iter().position(|s| s.loop_index != lp).map_or(trace.len(), |n| k + n);
        if lp > 0 {
            println!("loop {lp}: closure error {:.3e} mm", trace[end - 1].achieved.distance(start));
        }
        k = end;
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    let code = match &e {
        ScenarioError::Io { .. } | ScenarioError::Log(_) => IO,
        ScenarioError::Config(ConfigError::Io { .. }) => IO,
        ScenarioError::Parse(_) | ScenarioError::Config(_) | ScenarioError::Setup(_) => USAGE,
        ScenarioError::Sim { .. } => KINEMATICS,
    };
    Failure::new(code, e)
}

/// Exit code of a finished run: rejected script entries first (the script
/// is wrong), then failure events, then an unfinished script.
pub fn run_exit_code(run: &ScenarioRun) -> u8 {
    if run.first_rejection(ErrorCode::OutOfWorkspace).is_some() {
        KINEMATICS
    } else if !run.rejected.is_empty() {
        USAGE
    } else if run.failures().next().is_some() || !run.completed {
        EVENT
    } else {
        0
    }
}

pub fn run(path: &Path, record: Option<PathBuf>) -> Result<(), Failure> {
    let (scenario, base) = load_scenario(path).map_err(scenario_failure)?;
    let cfg = scenario.resolve_config(&base).map_err(scenario_failure)?;
    let record = record.or_else(|| scenario.record.as_ref().map(|r| base.join(r)));
    let io = |p: &Path, e: std::io::Error| Failure::new(IO, anyhow!("cannot write {}: {e}", p.display()));
    let mut log = match &record {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| io(p, e))?)),
        None => None,
    };
    let result = run_scenario(&scenario, cfg, |line| match log.as_mut() {
        Some(w) => writeln!(w, "{line}"),
        None => Ok(()),
    });
    if let (Some(w), Some(p)) = (log.as_mut(), &record) {
        w.flush().map_err(|e| io(p, e))?;
    }
    let run = result.map_err(scenario_failure)?;

    for (tick, event) in &run.events {
        println!("tick {tick}: {}", serde_json::to_string(event).expect("event serialises"));
    }
    for (tick, e) in &run.rejected {
        println!("tick {tick}: rejected ({}): {}", serde_json::to_string(&e.code).expect("code serialises"), e.message);
    }
    for obj in &run.world.objects {
        let p = obj.pose.position;
        println!(
            "object {}: position ({:.4}, {:.4}) mm, orientation {:.4} deg, held {}",
            obj.id,
            p.x,
            p.y,
            obj.pose.orientation.to_degrees(),
            obj.held
        );
    }
    let code = run_exit_code(&run);
    let verdict = match code {
        0 => "ok".to_string(),
        EVENT if run.failures().next().is_none() => "script unfinished at the tick budget".to_string(),
        EVENT => "failure event".to_string(),
        _ => "script entry rejected".to_string(),
    };
    println!("ticks {}, result: {verdict}", run.ticks);
    if code == 0 {
        Ok(())
    } else {
        Err(Failure::new(code, anyhow!("scenario {}: {verdict}", path.display())))
    }
}

fn fit_failure(e: MechanicsError) -> Failure {
    Failure::new(FIT, e)
}

pub fn fit(model: FitModel, input: &Path, out: Option<PathBuf>, degree: usize, additive: bool) -> Result<(), Failure> {
    let file = File::open(input).map_err(|e| Failure::new(IO, anyhow!("cannot read {}: {e}", input.display())))?;
    let header = match model {
        FitModel::Buckling => BUCKLING_HEADER,
        FitModel::Spring => SPRING_HEADER,
        FitModel::Torque => TORQUE_HEADER,
    };
    let samples = read_samples(file, header).map_err(fit_failure)?;
    let n = samples.len();
    let (fragment, report) = match model {
        FitModel::Buckling => {
            let fit = fit_buckling(&samples, additive).map_err(fit_failure)?;
            let params = match fit.model {
                BucklingModel::Offset { moment, length_offset } => {
                    format!("form offset, moment {moment:.6} N mm, length_offset {length_offset:.6} mm")
                }
                BucklingModel::Additive { moment, force_offset } => {
                    format!("form additive, moment {moment:.6} N mm, force_offset {force_offset:.6} N")
                }
            };
            (mechanics_fragment("buckling", &fit.model), format!("buckling: {params}, rms residual {:.3e} N", fit.rms))
        }
        FitModel::Spring => {
            let fit = fit_spring(&samples, degree).map_err(fit_failure)?;
            if !fit.monotone {
                eprintln!(
                    "warning: the fitted loading curve is not strictly increasing on [0, {}] mm; \
                     force inversion will be ambiguous. Try a lower --degree.",
                    fit.spring.max_displacement
                );
            }
            let report = format!(
                "spring: degree {degree}, coefficients {:?}, monotone {}, rms residual {:.3e} N",
                fit.spring.loading, fit.monotone, fit.rms
            );
            (mechanics_fragment("spring", &fit.spring), report)
        }
        FitModel::Torque => {
            let spline = fit_torque(&samples).map_err(fit_failure)?;
            let rms = (samples.iter().map(|&(a, t)| (spline.evaluate(a).torque - t).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt();
            let report = format!("torque: {} knots, rms residual {rms:.3e} N mm", spline.angles.len());
            (mechanics_fragment("torque", &spline), report)
        }
    };
    let fragment = fragment.map_err(|e| Failure::new(FIT, e))?;
    println!("{n} samples; {report}");
    let text = format!("# {report}\n{fragment}");
    match out {
        Some(p) => write_file(&p, |w| w.write_all(text.as_bytes())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn serve(config: Option<PathBuf>, host: &str, port: u16, tick_hz: f64, record: Option<PathBuf>) -> Result<(), Failure> {
    if !(tick_hz > 0.0 && tick_hz.is_finite()) {
        return Err(Failure::usage(format!("--tick-hz must be > 0, got {tick_hz}")));
    }
    let cfg = load(config)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(IO, e))?;
    rt.block_on(async move {
        let options = ServeOptions { tick_hz, record: record.is_some(), keep_snapshots: false };
        let server = Server::bind((host.to_string(), port), cfg, InitialPose::default(), options)
            .await
            .map_err(|e| match e {
                ServeError::InvalidTickRate(_) | ServeError::World(_) => Failure::new(USAGE, e),
                other => Failure::new(IO, other),
            })?;
        // Installed before the ready line so an early interrupt is not fatal.
        let interrupt = interrupt_listener().map_err(|e| Failure::new(IO, e))?;
        println!("tapegrip teleop ready on ws://{}/ws (protocol_version {PROTOCOL_VERSION})", server.local_addr());
        std::io::stdout().flush().map_err(|e| Failure::new(IO, e))?;
        interrupt.await;
        let recording = server.shutdown().await.map_err(|e| Failure::new(IO, e))?;
        if let Some(p) = record {
            write_file(&p, |w| w.write_all(recording.scenario.to_json_pretty().as_bytes()))?;
            println!("session recorded to {}", p.display());
        }
        Ok(())
    })
}

#[cfg(unix)]
fn interrupt_listener() -> std::io::Result<impl std::future::Future<Output = ()>> {
    let mut sig = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::interrupt())?;
    Ok(async move {
        sig.recv().await;
    })
}

#[cfg(not(unix))]
fn interrupt_listener() -> std::io::Result<impl std::future::Future<Output = ()>> {
    Ok(async {
        let _ = tokio::signal::ctrl_c().await;
    })
}
