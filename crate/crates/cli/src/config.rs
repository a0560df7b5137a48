//! Run configuration: command-line flags layered over an optional JSON file.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use softland::homotopy::HomotopySchedule;
use softland::scaling::PhysicalConstants;
use softland::shooting::{InitialCondition, ShootingKind, TfSeed};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Time-optimal landing for one initial condition.
    SolveTime,
    /// Fuel-optimal landing for one initial condition.
    SolveFuel,
    /// Time-optimal solves over random initial conditions.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BackwardPiim,
    ForwardIcvn,
    ForwardSicvn,
    HomotopyBackward,
    HomotopyForward,
    DirectIcvn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BackwardPiim => "backward-piim",
            Method::ForwardIcvn => "forward-icvn",
            Method::ForwardSicvn => "forward-sicvn",
            Method::HomotopyBackward => "homotopy-backward",
            Method::HomotopyForward => "homotopy-forward",
            Method::DirectIcvn => "direct-icvn",
        }
    }

    /// Shooting formulation of a time-optimal method.
    pub fn time_kind(self) -> Option<ShootingKind> {
        match self {
            Method::BackwardPiim => Some(ShootingKind::BwdPiimTime),
            Method::ForwardIcvn => Some(ShootingKind::FwdIcvnTime),
            Method::ForwardSicvn => Some(ShootingKind::FwdSicvnTime),
            _ => None,
        }
    }

    fn fits(self, command: Command) -> bool {
        match command {
            Command::SolveTime | Command::Batch => self.time_kind().is_some(),
            Command::SolveFuel => self.time_kind().is_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfSeedArg {
    Estimate,
    Uniform,
}

impl From<TfSeedArg> for TfSeed {
    fn from(v: TfSeedArg) -> Self {
        match v {
            TfSeedArg::Estimate => TfSeed::Estimate,
            TfSeedArg::Uniform => TfSeed::Uniform,
        }
    }
}

/// Indirect-method solver for the planar lunar soft-landing problem.
///
/// Inputs and outputs are dimensional (km, m/s, rad/s, kg, s). Every flag
/// can also be given in a JSON file passed with --config, using the flag
/// name as key; flags on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "softland", version)]
pub struct Cli {
    /// solve-time, solve-fuel or batch; may instead come from the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON file with any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial radius, km (default: the reference descent case).
    #[arg(long, allow_negative_numbers = true)]
    pub r0_km: Option<f64>,
    /// Initial radial velocity, m/s.
    #[arg(long, allow_negative_numbers = true)]
    pub v0_mps: Option<f64>,
    /// Initial angular velocity, rad/s.
    #[arg(long, allow_negative_numbers = true)]
    pub omega0_radps: Option<f64>,
    /// Initial mass, kg.
    #[arg(long, allow_negative_numbers = true)]
    pub m0_kg: Option<f64>,
    /// backward-piim, forward-icvn or forward-sicvn for solve-time and batch;
    /// homotopy-backward, homotopy-forward or direct-icvn for solve-fuel.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Solve for ln(t_f) so the flight time stays positive.
    #[arg(long)]
    pub remedy: bool,
    /// Initial flight-time guess: the analytic estimate or uniform random.
    #[arg(long, value_enum)]
    pub tf_seed: Option<TfSeedArg>,
    /// Random seed for guesses and batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of batch cases.
    #[arg(long)]
    pub n: Option<usize>,
    /// Random guesses per solve (default 20, or 1 per batch case).
    #[arg(long)]
    pub attempts: Option<usize>,
    /// Comma-separated kappa values, starting at 1.
    #[arg(long, value_delimiter = ',')]
    pub kappa_schedule: Option<Vec<f64>>,
    /// Comma-separated smoothing values, decreasing.
    #[arg(long, value_delimiter = ',')]
    pub delta_schedule: Option<Vec<f64>>,
    /// Directory for all output files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Path of the final trajectory CSV (default: <out-dir>/trajectory.csv).
    #[arg(long)]
    pub traj_csv: Option<PathBuf>,
    /// Also write one trajectory CSV per converged continuation stage.
    #[arg(long)]
    pub stage_csvs: bool,
}

/// Contents of a --config file.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub r0_km: Option<f64>,
    pub v0_mps: Option<f64>,
    pub omega0_radps: Option<f64>,
    pub m0_kg: Option<f64>,
    pub method: Option<Method>,
    pub remedy: Option<bool>,
    pub tf_seed: Option<TfSeedArg>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub attempts: Option<usize>,
    pub kappa_schedule: Option<Vec<f64>>,
    pub delta_schedule: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
    pub traj_csv: Option<PathBuf>,
    pub stage_csvs: Option<bool>,
    pub constants: Option<PhysicalConstants>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub initial_condition: InitialCondition,
    pub method: Method,
    pub remedy: bool,
    pub tf_seed: TfSeedArg,
    pub seed: u64,
    pub n: usize,
    pub attempts: usize,
    pub schedule: HomotopySchedule,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub traj_csv: PathBuf,
    #[serde(skip)]
    pub stage_csvs: bool,
    pub constants: PhysicalConstants,
}

impl RunConfig {
    pub fn resolve(cli: Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let command = cli
            .command
            .or(file.command)
            .ok_or_else(|| CliError::Usage("no command given (solve-time, solve-fuel or batch)".into()))?;
        let reference = InitialCondition::reference();
        let initial_condition = InitialCondition {
            r0_km: cli.r0_km.or(file.r0_km).unwrap_or(reference.r0_km),
            v0_mps: cli.v0_mps.or(file.v0_mps).unwrap_or(reference.v0_mps),
            omega0_radps: cli.omega0_radps.or(file.omega0_radps).unwrap_or(reference.omega0_radps),
            m0_kg: cli.m0_kg.or(file.m0_kg).unwrap_or(reference.m0_kg),
        };
        let method = cli.method.or(file.method).unwrap_or(match command {
            Command::SolveFuel => Method::HomotopyBackward,
            _ => Method::BackwardPiim,
        });
        if !method.fits(command) {
            return Err(CliError::Usage(format!(
                "method {} does not apply to {}",
                method.name(),
                command.to_possible_value().unwrap().get_name()
            )));
        }
        let n = cli.n.or(file.n).unwrap_or(100);
        if n == 0 {
            return Err(CliError::Usage("n must be positive".into()));
        }
        let attempts = cli
            .attempts
            .or(file.attempts)
            .unwrap_or(if command == Command::Batch { 1 } else { 20 });
        if attempts == 0 {
            return Err(CliError::Usage("attempts must be positive".into()));
        }
        let mut schedule = HomotopySchedule::default();
        if let Some(k) = cli.kappa_schedule.or(file.kappa_schedule) {
            schedule.kappa_sequence = k;
        }
        if let Some(d) = cli.delta_schedule.or(file.delta_schedule) {
            schedule.delta_sequence = d;
        }
        schedule
            .validate()
            .map_err(|e| CliError::Usage(format!("schedule: {e}")))?;
        let constants = file.constants.unwrap_or_default();
        constants
            .validate()
            .map_err(|e| CliError::Usage(format!("constants: {e}")))?;
        let out_dir = cli.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("out"));
        let traj_csv = cli
            .traj_csv
            .or(file.traj_csv)
            .unwrap_or_else(|| out_dir.join("trajectory.csv"));
        let config = Self {
            command,
            initial_condition,
            method,
            remedy: cli.remedy || file.remedy.unwrap_or(false),
            tf_seed: cli.tf_seed.or(file.tf_seed).unwrap_or(TfSeedArg::Estimate),
            seed: cli.seed.or(file.seed).unwrap_or(1),
            n,
            attempts,
            schedule,
            out_dir,
            traj_csv,
            stage_csvs: cli.stage_csvs || file.stage_csvs.unwrap_or(false),
            constants,
        };
        if command != Command::Batch {
            config.check_initial_condition()?;
        }
        Ok(config)
    }

    fn check_initial_condition(&self) -> Result<(), CliError> {
        let ic = &self.initial_condition;
        let finite = [ic.r0_km, ic.v0_mps, ic.omega0_radps, ic.m0_kg]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(CliError::Usage("initial condition must be finite".into()));
        }
        let surface_km = self.constants.lunar_radius / 1000.0;
        if ic.r0_km < surface_km {
            return Err(CliError::Usage(format!(
                "r0 = {} km is below the surface radius {surface_km} km",
                ic.r0_km
            )));
        }
        if ic.m0_kg <= 0.0 {
            return Err(CliError::Usage(format!("m0 = {} kg must be positive", ic.m0_kg)));
        }
        Ok(())
    }
}
