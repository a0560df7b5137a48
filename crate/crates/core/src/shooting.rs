//! Shooting formulations of the landing problem: unknown vectors, residuals,
//! random initial guesses, the flight-time estimator, post-solve
//! reconstruction of `p_m0`, `p0` and `k`, and outcome classification.
//!
//! A negative decoded final time is accepted without the exponential
//! substitution and propagated in the opposite direction, which is how
//! convergence to `t_f < 0` shows up in batch statistics.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, Augmented, CostRegime, Direction, DynamicsError};
use crate::integrator::{self, IntegrationSettings, PropagationError, Trajectory};
use crate::rootfind::{self, SolveReport, SolveStatus, SolverSettings};
use crate::scaling::{PhysicalConstants, ScalingError, Scales, UnitRole, Vehicle};

/// Minimum admissible scaled radius along a landing trajectory.
pub const FEASIBILITY_RADIUS: f64 = 1.0 - 1e-9;

/// Fuel-estimate margin applied to the rocket equation.
pub const FUEL_MARGIN: f64 = 1.05;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error("initial radius {r0} is below the lunar surface (scaled)")]
    BelowSurface { r0: f64 },
    #[error("initial mass must be positive, got {0} kg")]
    NonPositiveMass(f64),
    #[error("{kind} has {expected} unknowns, got {got}")]
    Length {
        kind: ShootingKind,
        expected: usize,
        got: usize,
    },
    #[error("{kind} cannot be evaluated in a {stage} stage")]
    StageMismatch { kind: ShootingKind, stage: Stage },
    #[error("non-finite unknown in {0}")]
    NonFinite(ShootingKind),
    #[error("exponential final-time encoding needs t_f > 0, got {0}")]
    RemedyNeedsPositiveTime(f64),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{0} is not a time-optimal formulation")]
    NotTimeOptimal(ShootingKind),
    #[error("recovered p0 = {0} is not positive")]
    NonPositiveP0(f64),
}

/// Dimensional initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub r0_km: f64,
    pub v0_mps: f64,
    pub omega0_radps: f64,
    pub m0_kg: f64,
}

impl InitialCondition {
    /// The single-case example used for both the time- and fuel-optimal runs.
    pub fn reference() -> Self {
        Self {
            r0_km: 1902.1754,
            v0_mps: 23.1290,
            omega0_radps: 2.3261e-4,
            m0_kg: 483.4040,
        }
    }
}

/// A landing problem in scaled units; the mass unit is the initial mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingProblem {
    pub consts: PhysicalConstants,
    pub scales: Scales,
    pub vehicle: Vehicle,
    pub ic: InitialCondition,
    pub initial: dynamics::LanderState,
}

impl LandingProblem {
    pub fn new(consts: &PhysicalConstants, ic: InitialCondition) -> Result<Self, ShootingError> {
        if !(ic.m0_kg > 0.0) {
            return Err(ShootingError::NonPositiveMass(ic.m0_kg));
        }
        let scales = Scales::new(consts, ic.m0_kg)?;
        let r0 = scales.nondimensionalize(ic.r0_km * 1e3, UnitRole::Length);
        if !(ic.r0_km * 1e3 >= consts.lunar_radius) {
            return Err(ShootingError::BelowSurface { r0 });
        }
        let initial = dynamics::LanderState::new(
            r0,
            scales.nondimensionalize(ic.v0_mps, UnitRole::Speed),
            ic.omega0_radps * scales.time,
            1.0,
        );
        Ok(Self {
            consts: *consts,
            scales,
            vehicle: Vehicle::new(consts, &scales),
            ic,
            initial,
        })
    }

    pub fn estimate(&self) -> Result<EstimateBundle, ShootingError> {
        estimate(&self.initial, &self.vehicle)
    }

    pub fn seconds(&self, t: f64) -> f64 {
        t * self.scales.time
    }

    pub fn kilograms(&self, m: f64) -> f64 {
        m * self.scales.mass
    }
}

/// Energy-based estimates of fuel and minimum flight time, in scaled units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateBundle {
    pub e0: f64,
    pub delta_v: f64,
    pub delta_m_hat: f64,
    pub t_f_hat: f64,
    pub t_max: f64,
}

/// Estimator for a scaled initial state with unit mass.
pub fn estimate(
    state: &dynamics::LanderState,
    vehicle: &Vehicle,
) -> Result<EstimateBundle, ShootingError> {
    let r0 = state.r;
    if !(r0 >= 1.0) {
        return Err(ShootingError::BelowSurface { r0 });
    }
    let e0 = 0.5 * (state.v * state.v + (state.omega * r0).powi(2)) + (r0 - 1.0) / (r0 * r0);
    let delta_v = (2.0 * e0).sqrt();
    let c = vehicle.exhaust_speed;
    let delta_m_hat = FUEL_MARGIN * -(-delta_v / c).exp_m1();
    Ok(EstimateBundle {
        e0,
        delta_v,
        delta_m_hat,
        t_f_hat: delta_m_hat * c / vehicle.max_thrust,
        t_max: c / vehicle.max_thrust,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShootingKind {
    /// `[p_r0, p_v0, p_ω0, p_m0, p0, t_f]`
    FwdIcvnTime,
    /// `[p_r0, p_v0, p_ω0, t_f]`
    FwdSicvnTime,
    /// `[p_r, p_v, p_ω, m]` at touchdown, then `t_f`.
    BwdPiimTime,
    /// `[p_r0, p_v0, p_ω0, p_m0, p0F, t_f]`
    FwdIcvnFuel,
    /// `[p_r, p_v, p_ω, m]` at touchdown, then `t_f`; `p_m = 0` at touchdown.
    BwdHomotopy,
    /// `[p_r0, p_v0, p_ω0, p_m0, t_f]`
    FwdHomotopy,
}

impl ShootingKind {
    pub const ALL: [ShootingKind; 6] = [
        ShootingKind::FwdIcvnTime,
        ShootingKind::FwdSicvnTime,
        ShootingKind::BwdPiimTime,
        ShootingKind::FwdIcvnFuel,
        ShootingKind::BwdHomotopy,
        ShootingKind::FwdHomotopy,
    ];

    pub fn unknown_names(self) -> &'static [&'static str] {
        match self {
            ShootingKind::FwdIcvnTime => &["p_r0", "p_v0", "p_omega0", "p_m0", "p0", "t_f"],
            ShootingKind::FwdSicvnTime => &["p_r0", "p_v0", "p_omega0", "t_f"],
            ShootingKind::BwdPiimTime | ShootingKind::BwdHomotopy => {
                &["p_r_f", "p_v_f", "p_omega_f", "m_f", "t_f"]
            }
            ShootingKind::FwdIcvnFuel => &["p_r0", "p_v0", "p_omega0", "p_m0", "p0F", "t_f"],
            ShootingKind::FwdHomotopy => &["p_r0", "p_v0", "p_omega0", "p_m0", "t_f"],
        }
    }

    pub fn len(self) -> usize {
        self.unknown_names().len()
    }

    pub fn direction(self) -> Direction {
        match self {
            ShootingKind::BwdPiimTime | ShootingKind::BwdHomotopy => Direction::Backward,
            _ => Direction::Forward,
        }
    }

    pub fn is_time_optimal(self) -> bool {
        matches!(
            self,
            ShootingKind::FwdIcvnTime | ShootingKind::FwdSicvnTime | ShootingKind::BwdPiimTime
        )
    }

    fn as_str(self) -> &'static str {
        match self {
            ShootingKind::FwdIcvnTime => "fwd-icvn-time",
            ShootingKind::FwdSicvnTime => "fwd-sicvn-time",
            ShootingKind::BwdPiimTime => "bwd-piim-time",
            ShootingKind::FwdIcvnFuel => "fwd-icvn-fuel",
            ShootingKind::BwdHomotopy => "bwd-homotopy",
            ShootingKind::FwdHomotopy => "fwd-homotopy",
        }
    }
}

impl fmt::Display for ShootingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost parameters that are not shooting unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Time,
    Fuel { delta: f64 },
    Homotopy { p0: f64, kappa: f64, delta: f64 },
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Time => f.write_str("time"),
            Stage::Fuel { delta } => write!(f, "fuel(delta={delta})"),
            Stage::Homotopy { p0, kappa, delta } => {
                write!(f, "homotopy(p0={p0}, kappa={kappa}, delta={delta})")
            }
        }
    }
}

/// Shooting unknowns. With `remedy` set the last slot holds `ξ = ln t_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingVector {
    pub kind: ShootingKind,
    pub values: Vec<f64>,
    pub remedy: bool,
}

impl ShootingVector {
    pub fn new(kind: ShootingKind, values: Vec<f64>, remedy: bool) -> Result<Self, ShootingError> {
        if values.len() != kind.len() {
            return Err(ShootingError::Length {
                kind,
                expected: kind.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ShootingError::NonFinite(kind));
        }
        Ok(Self {
            kind,
            values,
            remedy,
        })
    }

    /// Builds a vector from unknowns whose last entry is the plain final time.
    pub fn encode(kind: ShootingKind, mut values: Vec<f64>, remedy: bool) -> Result<Self, ShootingError> {
        if remedy {
            let t_f = values.last().copied().unwrap_or(f64::NAN);
            if !(t_f > 0.0) {
                return Err(ShootingError::RemedyNeedsPositiveTime(t_f));
            }
            *values.last_mut().expect("non-empty") = t_f.ln();
        }
        Self::new(kind, values, remedy)
    }

    pub fn final_time(&self) -> f64 {
        decode_final_time(self.values[self.values.len() - 1], self.remedy)
    }

    /// The unknowns with the final time decoded.
    pub fn decoded(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        let last = v.len() - 1;
        v[last] = self.final_time();
        v
    }

    /// Same unknowns with the final-time slot re-encoded.
    pub fn with_remedy(&self, remedy: bool) -> Result<Self, ShootingError> {
        Self::encode(self.kind, self.decoded(), remedy)
    }

    /// Unknowns relabelled as another kind of equal length, keeping the encoding.
    pub fn relabel(&self, kind: ShootingKind) -> Result<Self, ShootingError> {
        Self::new(kind, self.values.clone(), self.remedy)
    }
}

fn decode_final_time(slot: f64, remedy: bool) -> f64 {
    if remedy {
        slot.exp()
    } else {
        slot
    }
}

fn regime_for(kind: ShootingKind, stage: &Stage, values: &[f64]) -> Result<CostRegime, ShootingError> {
    use ShootingKind::*;
    match (kind, *stage) {
        (FwdIcvnTime, Stage::Time) => Ok(CostRegime::TimeIcvn { p0: values[4] }),
        (FwdSicvnTime | BwdPiimTime, Stage::Time) => Ok(CostRegime::TimeIcvn { p0: 0.0 }),
        (FwdIcvnFuel, Stage::Fuel { delta }) => Ok(CostRegime::Fuel {
            p0f: values[4],
            delta,
        }),
        (BwdHomotopy | FwdHomotopy, Stage::Homotopy { p0, kappa, delta }) => {
            Ok(CostRegime::Homotopy { p0, kappa, delta })
        }
        _ => Err(ShootingError::StageMismatch {
            kind,
            stage: *stage,
        }),
    }
}

/// Starting point of the propagation implied by the unknowns.
fn start_point(problem: &LandingProblem, kind: ShootingKind, values: &[f64]) -> Augmented {
    let s = &problem.initial;
    match kind {
        ShootingKind::BwdPiimTime | ShootingKind::BwdHomotopy => {
            [1.0, 0.0, 0.0, values[3], values[0], values[1], values[2], 0.0]
        }
        ShootingKind::FwdSicvnTime => [s.r, s.v, s.omega, s.m, values[0], values[1], values[2], 0.0],
        _ => [s.r, s.v, s.omega, s.m, values[0], values[1], values[2], values[3]],
    }
}

/// Direction and duration for a signed final time.
fn span(kind: ShootingKind, t_f: f64) -> (Direction, f64) {
    if t_f >= 0.0 {
        (kind.direction(), t_f)
    } else {
        (kind.direction().reversed(), -t_f)
    }
}

fn hamiltonian_at(
    vehicle: &Vehicle,
    regime: &CostRegime,
    y: &Augmented,
) -> Result<f64, DynamicsError> {
    let (state, costate) = dynamics::split(y);
    let (control, _) = dynamics::optimal_control(vehicle, &state, &costate, regime)?;
    dynamics::hamiltonian(vehicle, &state, &costate, &control, regime)
}

fn check_stage(z: &ShootingVector, stage: &Stage) -> Result<CostRegime, ShootingError> {
    if z.values.len() != z.kind.len() {
        return Err(ShootingError::Length {
            kind: z.kind,
            expected: z.kind.len(),
            got: z.values.len(),
        });
    }
    regime_for(z.kind, stage, &z.values)
}

/// End point of the extremal defined by `z`: the touchdown state for forward
/// kinds and the initial-time state for backward kinds.
pub fn terminal(
    problem: &LandingProblem,
    z: &ShootingVector,
    stage: &Stage,
    settings: &IntegrationSettings,
) -> Result<integrator::TerminalPoint, ShootingError> {
    let regime = check_stage(z, stage)?;
    let (direction, duration) = span(z.kind, z.final_time());
    let start = start_point(problem, z.kind, &z.values);
    Ok(integrator::propagate_terminal(
        &problem.vehicle,
        &regime,
        direction,
        &start,
        duration,
        settings,
    )?)
}

/// Shooting function of `z.kind`.
pub fn residual(
    problem: &LandingProblem,
    z: &ShootingVector,
    stage: &Stage,
    settings: &IntegrationSettings,
) -> Result<Vec<f64>, ShootingError> {
    let regime = check_stage(z, stage)?;
    let y = terminal(problem, z, stage, settings)?.y;
    let x = &z.values;
    let s0 = &problem.initial;
    let norm3 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let landing = [y[0] - 1.0, y[1], y[2]];
    let matched = [y[0] - s0.r, y[1] - s0.v, y[2] - s0.omega, y[3] - s0.m];
    let h = || hamiltonian_at(&problem.vehicle, &regime, &y);
    Ok(match z.kind {
        ShootingKind::FwdIcvnTime | ShootingKind::FwdIcvnFuel => {
            let norm5 = norm3 + x[3] * x[3] + x[4] * x[4];
            vec![landing[0], landing[1], landing[2], y[7], norm5 - 1.0, h()?]
        }
        ShootingKind::FwdSicvnTime => vec![landing[0], landing[1], landing[2], norm3 - 1.0],
        ShootingKind::BwdPiimTime => {
            vec![matched[0], matched[1], matched[2], matched[3], norm3 - 1.0]
        }
        ShootingKind::BwdHomotopy => vec![matched[0], matched[1], matched[2], matched[3], h()?],
        ShootingKind::FwdHomotopy => vec![landing[0], landing[1], landing[2], y[7], h()?],
    })
}

/// How the final-time slot of a random guess is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfSeed {
    /// The analytic estimate `t̂_f`.
    #[default]
    Estimate,
    /// Uniform over `(0, t_max]` (fuel problem: `[t̂_f, t_max]`).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GuessOptions {
    pub remedy: bool,
    pub tf_seed: TfSeed,
}

/// Random initial guess inside the solution space of `kind`.
pub fn initial_guess<R: Rng + ?Sized>(
    kind: ShootingKind,
    est: &EstimateBundle,
    options: GuessOptions,
    rng: &mut R,
) -> ShootingVector {
    let mut values = match kind {
        ShootingKind::FwdIcvnTime | ShootingKind::FwdIcvnFuel => {
            let mut v = symmetric3(rng);
            v.extend([open_unit(rng), open_unit(rng)]);
            v
        }
        ShootingKind::FwdSicvnTime => symmetric3(rng),
        ShootingKind::FwdHomotopy => {
            let mut v = symmetric3(rng);
            v.push(open_unit(rng));
            v
        }
        ShootingKind::BwdPiimTime | ShootingKind::BwdHomotopy => {
            let [x, y, z] = octant_direction(rng);
            vec![x, y, z, 1.0 - est.delta_m_hat]
        }
    };
    let t_f = match options.tf_seed {
        TfSeed::Estimate => est.t_f_hat,
        TfSeed::Uniform if kind == ShootingKind::FwdIcvnFuel => {
            est.t_f_hat + (est.t_max - est.t_f_hat) * rng.random::<f64>()
        }
        TfSeed::Uniform => est.t_max * open_unit(rng),
    };
    let slot = if options.remedy {
        if t_f > 0.0 {
            t_f.ln()
        } else {
            (0.5 * est.t_max).ln()
        }
    } else {
        t_f
    };
    values.push(slot);
    ShootingVector {
        kind,
        values,
        remedy: options.remedy,
    }
}

fn symmetric3<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Uniform draw on `(0, 1]`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Uniform direction on the unit sphere folded into the octant
/// `p_r > 0, p_v < 0, p_ω > 0`.
pub fn octant_direction<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    [x.abs(), -y.abs(), z.abs()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub delta_p_m: f64,
    pub p_m0: f64,
    /// `1/sqrt(1 - Δp_m²)`; absent when `|Δp_m| ≥ 1`.
    pub k: Option<f64>,
    pub p0: f64,
}

impl ReconstructionResult {
    pub fn new(delta_p_m: f64, p0: f64) -> Result<Self, ShootingError> {
        let k = if delta_p_m.abs() < 1.0 {
            Some(1.0 / (1.0 - delta_p_m * delta_p_m).sqrt())
        } else {
            log::warn!("|delta p_m| = {} >= 1, scaling factor undefined", delta_p_m.abs());
            None
        };
        if !(p0 > 0.0) {
            return Err(ShootingError::NonPositiveP0(p0));
        }
        Ok(Self {
            delta_p_m,
            p_m0: -delta_p_m,
            k,
            p0,
        })
    }
}

/// Recovers `p_m0`, `k` and `p0` from a time-optimal solution and the end
/// point of its extremal (as returned by [`terminal`]).
pub fn reconstruct(
    problem: &LandingProblem,
    z: &ShootingVector,
    end: &Augmented,
) -> Result<ReconstructionResult, ShootingError> {
    let t = problem.vehicle.max_thrust;
    let (delta_p_m, p_v, p_w, m_f) = match z.kind {
        // p_m integrated backward from zero at touchdown ends at p_m0
        ShootingKind::BwdPiimTime => (-end[7], z.values[1], z.values[2], z.values[3]),
        // p_m integrated forward from zero accumulates Δp_m
        ShootingKind::FwdSicvnTime => (end[7], end[5], end[6], end[3]),
        ShootingKind::FwdIcvnTime => (end[7] - z.values[3], end[5], end[6], end[3]),
        other => return Err(ShootingError::NotTimeOptimal(other)),
    };
    let p0 = t / m_f * p_v.hypot(p_w) + p_v;
    ReconstructionResult::new(delta_p_m, p0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    SuccessfulLanding,
    NegativeFinalTime,
    Subsurface,
    NotConverged,
}

pub fn classify(report: &SolveReport, t_f: f64, min_radius: f64) -> Outcome {
    if report.status != SolveStatus::Converged {
        Outcome::NotConverged
    } else if t_f <= 0.0 {
        Outcome::NegativeFinalTime
    } else if !(min_radius >= FEASIBILITY_RADIUS) {
        Outcome::Subsurface
    } else {
        Outcome::SuccessfulLanding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShootingConfig {
    pub integration: IntegrationSettings,
    pub solver: SolverSettings,
}

/// A finished solve with its physical-time trajectory when one exists.
#[derive(Debug, Clone)]
pub struct ShootingSolution {
    pub z: ShootingVector,
    pub stage: Stage,
    pub report: SolveReport,
    pub outcome: Outcome,
    /// Decoded scaled final time.
    pub t_f: f64,
    pub trajectory: Option<Trajectory>,
    /// Minimum scaled radius over the flight.
    pub min_radius: Option<f64>,
    pub reconstruction: Option<ReconstructionResult>,
    pub note: Option<String>,
}

impl ShootingSolution {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::SuccessfulLanding
    }

    /// Scaled mass at touchdown.
    pub fn final_mass(&self) -> Option<f64> {
        self.trajectory
            .as_ref()
            .and_then(|t| t.states.last())
            .map(|s| s.m)
    }

    /// Normalized `[p_r0, p_v0, p_ω0, p_m0, p0, t_f]` of a time-optimal
    /// solution, suitable for the forward ICVN shooting function.
    pub fn icvn_vector(&self) -> Option<ShootingVector> {
        let rec = self.reconstruction?;
        let traj = self.trajectory.as_ref()?;
        let p = traj.costates.first()?;
        let raw = [p.p_r, p.p_v, p.p_omega, p.p_m.unwrap_or(rec.p_m0), rec.p0];
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut v: Vec<f64> = raw.iter().map(|x| x / n).collect();
        v.push(self.t_f);
        ShootingVector::encode(ShootingKind::FwdIcvnTime, v, false).ok()
    }

    pub fn record(&self, problem: &LandingProblem) -> SolutionRecord {
        let names = self.z.kind.unknown_names();
        let decoded = self.z.decoded();
        let unknowns_scaled = names
            .iter()
            .zip(&decoded)
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        let m_f = self.final_mass();
        SolutionRecord {
            kind: self.z.kind,
            stage: self.stage,
            remedy: self.z.remedy,
            outcome: self.outcome,
            unknowns_scaled,
            t_f_s: problem.seconds(self.t_f),
            final_mass_kg: m_f.map(|m| problem.kilograms(m)),
            fuel_kg: m_f.map(|m| problem.kilograms(1.0 - m)),
            min_radius_km: self.min_radius.map(|r| r * problem.scales.length / 1e3),
            switch_count: self.trajectory.as_ref().map(|t| t.switch_count),
            reconstruction: self.reconstruction,
            iterations: self.report.iterations,
            function_evaluations: self.report.function_evaluations,
            solver_status: self.report.status,
            final_residual_norm: self.report.final_residual_norm,
            note: self.note.clone(),
        }
    }
}

/// JSON form of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub kind: ShootingKind,
    pub stage: Stage,
    pub remedy: bool,
    pub outcome: Outcome,
    pub unknowns_scaled: BTreeMap<String, f64>,
    pub t_f_s: f64,
    pub final_mass_kg: Option<f64>,
    pub fuel_kg: Option<f64>,
    pub min_radius_km: Option<f64>,
    pub switch_count: Option<usize>,
    pub reconstruction: Option<ReconstructionResult>,
    pub iterations: usize,
    pub function_evaluations: usize,
    pub solver_status: SolveStatus,
    pub final_residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Samples the extremal of `z` over its whole flight, in physical time.
pub fn trajectory(
    problem: &LandingProblem,
    z: &ShootingVector,
    regime: &CostRegime,
    start: &Augmented,
    settings: &IntegrationSettings,
) -> Result<Trajectory, ShootingError> {
    let t_f = z.final_time();
    let (direction, duration) = span(z.kind, t_f);
    let traj = integrator::propagate(
        &problem.vehicle,
        regime,
        direction,
        start,
        0.0,
        duration,
        settings,
    )?;
    Ok(match direction {
        Direction::Backward => traj.into_physical_time(duration),
        Direction::Forward => traj,
    })
}

/// Solves the shooting function of `guess.kind` and post-processes the result.
pub fn solve(
    problem: &LandingProblem,
    guess: &ShootingVector,
    stage: &Stage,
    config: &ShootingConfig,
) -> Result<ShootingSolution, ShootingError> {
    check_stage(guess, stage)?;
    let kind = guess.kind;
    let remedy = guess.remedy;
    let report = rootfind::solve(
        |x: &[f64]| {
            let z = ShootingVector {
                kind,
                values: x.to_vec(),
                remedy,
            };
            residual(problem, &z, stage, &config.integration)
        },
        &guess.values,
        &config.solver,
    );
    let z = ShootingVector {
        kind,
        values: report.z_final.clone(),
        remedy,
    };
    Ok(finish(problem, z, stage, report, config))
}

fn finish(
    problem: &LandingProblem,
    z: ShootingVector,
    stage: &Stage,
    report: SolveReport,
    config: &ShootingConfig,
) -> ShootingSolution {
    let t_f = z.final_time();
    let mut solution = ShootingSolution {
        z,
        stage: *stage,
        report,
        outcome: Outcome::NotConverged,
        t_f,
        trajectory: None,
        min_radius: None,
        reconstruction: None,
        note: None,
    };
    if !solution.report.converged() || !(t_f > 0.0) {
        solution.outcome = classify(&solution.report, t_f, f64::NAN);
        return solution;
    }
    match sample_solution(problem, &solution.z, stage, &config.integration) {
        Ok((traj, min_radius, rec, note)) => {
            solution.outcome = classify(&solution.report, t_f, min_radius);
            solution.min_radius = Some(min_radius);
            solution.trajectory = Some(traj);
            solution.reconstruction = rec;
            solution.note = note;
        }
        Err(e) => {
            solution.note = Some(format!("post-solve propagation failed: {e}"));
        }
    }
    solution
}

type Sampled = (Trajectory, f64, Option<ReconstructionResult>, Option<String>);

fn sample_solution(
    problem: &LandingProblem,
    z: &ShootingVector,
    stage: &Stage,
    settings: &IntegrationSettings,
) -> Result<Sampled, ShootingError> {
    let mut regime = regime_for(z.kind, stage, &z.values)?;
    let mut start = start_point(problem, z.kind, &z.values);
    let mut rec = None;
    let mut note = None;
    // the residual's own propagation, not the resampled one, decides feasibility
    let end = terminal(problem, z, stage, settings)?;
    if z.kind.is_time_optimal() {
        match reconstruct(problem, z, &end.y) {
            Ok(r) => {
                if z.kind != ShootingKind::FwdIcvnTime {
                    regime = CostRegime::TimeIcvn { p0: r.p0 };
                }
                if z.kind == ShootingKind::FwdSicvnTime {
                    start[7] = r.p_m0;
                }
                rec = Some(r);
            }
            Err(e) => note = Some(e.to_string()),
        }
    }
    let traj = trajectory(problem, z, &regime, &start, settings)?;
    Ok((traj, end.min_radius, rec, note))
}

/// Solves from fresh random guesses until a successful landing or until
/// `attempts` guesses have been tried; returns the last solution.
pub fn solve_with_restarts<R: Rng + ?Sized>(
    problem: &LandingProblem,
    kind: ShootingKind,
    stage: &Stage,
    options: GuessOptions,
    config: &ShootingConfig,
    rng: &mut R,
    attempts: usize,
) -> Result<ShootingSolution, ShootingError> {
    let est = problem.estimate()?;
    let mut last = None;
    for attempt in 0..attempts.max(1) {
        let guess = initial_guess(kind, &est, options, rng);
        let sol = solve(problem, &guess, stage, config)?;
        log::debug!("{kind} attempt {attempt}: {:?}", sol.outcome);
        if sol.succeeded() {
            return Ok(sol);
        }
        last = Some(sol);
    }
    Ok(last.expect("at least one attempt"))
}
