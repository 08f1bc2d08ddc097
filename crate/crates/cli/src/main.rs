//! `sfbubble`: bubbles, foliations, geodesics and characteristic curves for
//! sub-Finsler norms on the Heisenberg group, as reproducible experiments.

mod artifact;
mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use artifact::Run;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or parameters: exit 1.
    Input(String),
    /// Computation finished but a check failed: exit 2.
    Check(String),
}

impl CliError {
    pub fn input(e: impl std::fmt::Display) -> CliError {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "sfbubble", version, about = "Sub-Finsler bubbles in the Heisenberg group")]
struct Cli {
    /// Print the artifact as JSON on stdout instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every randomized sampling step.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Write `wall_time_s: null` so repeated runs give byte-identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build or measure a bubble mesh.
    #[command(subcommand)]
    Bubble(BubbleCmd),
    /// Legendre foliation of a graph patch by φ-circles.
    Foliate(FoliateArgs),
    /// Normal extremal of the Pontryagin system.
    Geodesic(GeodesicArgs),
    /// Characteristic curve of a constant-curvature surface.
    Charcurve(CharcurveArgs),
    /// Taylor coefficients of the lower sheet at the south pole.
    Polecheck(PolecheckArgs),
    /// Mollification ladder for a crystalline norm.
    MollifyStudy(MollifyArgs),
    /// Polygonal norm data.
    #[command(subcommand)]
    Crystal(CrystalCmd),
    /// Invariant suites.
    #[command(subcommand)]
    Verify(VerifyCmd),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BubbleCmd {
    Build(BuildArgs),
    Measure(MeasureArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub norm: String,
    #[arg(long, default_value_t = 512)]
    pub n_t: usize,
    #[arg(long, default_value_t = 256)]
    pub n_tau: usize,
    #[arg(long, default_value = "mesh.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MeasureArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FoliateArgs {
    #[arg(long)]
    pub norm: String,
    /// Graph patch JSON; defaults to the bubble's lower sheet.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Nodes per side of the default patch.
    #[arg(long, default_value_t = 257)]
    pub grid: usize,
    /// Write the patch used to this file.
    #[arg(long)]
    pub save_patch: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub seeds: usize,
    /// Curvature to test against; defaults to the mean measured curvature.
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GeodesicArgs {
    /// Control norm ψ, e.g. `dagger:ellp:3`.
    #[arg(long)]
    pub psi: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub lz: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    /// Initial covector direction: `ℳ₀` is the unit ψ*-point at this angle.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub theta0: f64,
    #[arg(long, default_value_t = 2001)]
    pub samples: usize,
    #[arg(long, default_value = "curve.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CharcurveArgs {
    #[arg(long)]
    pub norm: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub h: f64,
    /// `h·s̄`, absolute or as a multiple of `M` (`0.3M`).
    #[arg(long, default_value = "0.3M")]
    pub hsbar: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub tau0: f64,
    /// Probe times for the shift, closure and conservation checks.
    #[arg(long, default_value_t = 9)]
    pub probes: usize,
    #[arg(long, default_value = "state.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PolecheckArgs {
    #[arg(long)]
    pub norm: String,
    #[arg(long, default_value_t = 12)]
    pub rays: usize,
    /// Relative tolerance on the fitted coefficients.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long, default_value = "fits.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MollifyArgs {
    #[arg(long)]
    pub norm: String,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
    pub ladder: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    pub n_t: usize,
    #[arg(long, default_value_t = 256)]
    pub n_tau: usize,
    #[arg(long, default_value_t = 20000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub sandwich_tol: f64,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrystalCmd {
    Faces(FacesArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FacesArgs {
    #[arg(long)]
    pub norm: String,
    /// Classify this patch instead of the built-in ruled face patches.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    #[arg(long, default_value_t = 65)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub angle_tol: f64,
    #[arg(long, default_value = "faces.json")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyCmd {
    All(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value = "euclidean")]
    pub norm: String,
    #[arg(long, default_value = "verify.json")]
    pub out: PathBuf,
}

/// Tolerances come from the command line; all must be positive.
fn check_tolerances(cmd: &Command) -> Result<(), CliError> {
    let tols: Vec<(&str, f64)> = match cmd {
        Command::Foliate(a) => vec![("tol", a.tol)],
        Command::Polecheck(a) => vec![("tol", a.tol)],
        Command::MollifyStudy(a) => vec![("sandwich-tol", a.sandwich_tol)],
        Command::Crystal(CrystalCmd::Faces(a)) => vec![("angle-tol", a.angle_tol)],
        _ => vec![],
    };
    for (name, v) in tols {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Input(format!("--{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = Run {
        started: Instant::now(),
        seed: cli.seed,
        config: serde_json::to_value(&cli.command).expect("config echo"),
        record_wall_time: !cli.reproducible,
    };
    let result = check_tolerances(&cli.command).and_then(|_| commands::dispatch(&cli.command, &run, cli.json));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
