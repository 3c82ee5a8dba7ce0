//! `tapegrip`: workspace export, path tracing, scenario runs, model fitting
//! and the teleoperation service.
//!
//! Exit codes: 0 ok, 1 usage or invalid input, 2 I/O, 3 workspace or
//! kinematics, 4 scenario event (object dropped, buckling, primitive failure,
//! unfinished script), 5 fit failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "tapegrip", version, about = "Tape-spring gripper simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Square,
    Triangle,
    Circle,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Buckling,
    Spring,
    Torque,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Export the grip-force heatmap as CSV and print the reachable areas.
    Workspace {
        /// Configuration file (TOML); the built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cell size (mm).
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        resolution: f64,
        /// Grip width (mm); mid rack travel when omitted.
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive one tip around a closed shape and write commanded versus
    /// achieved positions as CSV.
    Trace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        shape: ShapeArg,
        /// Edge length (square, triangle) or diameter (circle, star) in mm.
        #[arg(long, default_value_t = 60.0)]
        size: f64,
        #[arg(long, default_value_t = 1)]
        loops: u32,
        #[arg(long, value_enum, default_value_t = SideArg::Right)]
        side: SideArg,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        center_x: f64,
        #[arg(long, default_value_t = 400.0, allow_negative_numbers = true)]
        center_y: f64,
        /// Tip speed (mm/s); the configured tip speed when omitted.
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario file and write its snapshot log.
    Run {
        scenario: PathBuf,
        /// Snapshot log path; overrides the scenario's `record` entry.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Fit a mechanics model to CSV samples and emit a config fragment.
    Fit {
        #[arg(value_enum)]
        model: FitModel,
        #[arg(long = "in")]
        input: PathBuf,
        /// Fragment path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Polynomial degree of the spring fit.
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// Fit the additive buckling form `F = M / L + F0`.
        #[arg(long)]
        additive: bool,
    },
    /// Serve the teleoperation WebSocket endpoint at `/ws`.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the ready line shows the bound address.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
        tick_hz: f64,
        /// Write the session as a replayable scenario on shutdown.
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Workspace { config, resolution, width, out } => commands::workspace(config, resolution, width, &out),
        Cmd::Trace { config, shape, size, loops, side, center_x, center_y, speed, out } => {
            commands::trace(config, shape, size, loops, side, (center_x, center_y), speed, &out)
        }
        Cmd::Run { scenario, record } => commands::run(&scenario, record),
        Cmd::Fit { model, input, out, degree, additive } => commands::fit(model, &input, out, degree, additive),
        Cmd::Serve { config, host, port, tick_hz, record } => commands::serve(config, &host, port, tick_hz, record),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing_subscriber::filter::LevelFilter::WARN)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
