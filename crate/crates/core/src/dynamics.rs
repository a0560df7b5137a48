//! Planar point-mass lander dynamics, adjoint equations and the optimal
//! control laws for the time, fuel and homotopy cost functions.
//!
//! Everything here is in scaled units (mu = 1). Backward propagation runs in
//! flight-time-to-go `tau = t_f - t`; both state and co-state rates change sign.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scaling::Vehicle;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum DynamicsError {
    #[error("steering undefined: p_v and p_omega/r are both zero")]
    SingularSteering,
    #[error("cost regime requires the mass co-state but it is absent")]
    MissingMassCostate,
    #[error("non-positive mass {0}")]
    NonPositiveMass(f64),
    #[error("non-positive radius {0}")]
    NonPositiveRadius(f64),
    #[error("non-finite value in state or co-state")]
    NonFinite,
}

/// Scaled lander state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanderState {
    pub r: f64,
    pub v: f64,
    pub omega: f64,
    pub m: f64,
}

impl LanderState {
    pub fn new(r: f64, v: f64, omega: f64, m: f64) -> Self {
        Self { r, v, omega, m }
    }

    fn check(&self) -> Result<(), DynamicsError> {
        if !(self.r.is_finite() && self.v.is_finite() && self.omega.is_finite() && self.m.is_finite())
        {
            return Err(DynamicsError::NonFinite);
        }
        if self.r <= 0.0 {
            return Err(DynamicsError::NonPositiveRadius(self.r));
        }
        if self.m <= 0.0 {
            return Err(DynamicsError::NonPositiveMass(self.m));
        }
        Ok(())
    }

    /// Specific orbital energy, `(v² + (ωr)²)/2 - 1/r`.
    pub fn orbital_energy(&self) -> f64 {
        let vt = self.omega * self.r;
        0.5 * (self.v * self.v + vt * vt) - 1.0 / self.r
    }

    /// Specific angular momentum `ω r²`.
    pub fn angular_momentum(&self) -> f64 {
        self.omega * self.r * self.r
    }
}

/// Adjoint vector. `p_m` is absent in formulations that eliminate it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costate {
    pub p_r: f64,
    pub p_v: f64,
    pub p_omega: f64,
    pub p_m: Option<f64>,
}

impl Costate {
    pub fn new(p_r: f64, p_v: f64, p_omega: f64, p_m: Option<f64>) -> Self {
        Self {
            p_r,
            p_v,
            p_omega,
            p_m,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p_r: c * self.p_r,
            p_v: c * self.p_v,
            p_omega: c * self.p_omega,
            p_m: self.p_m.map(|p| c * p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// Throttle in [0, 1].
    pub u: f64,
    pub sin_psi: f64,
    pub cos_psi: f64,
}

impl Control {
    /// Steering angle from the local horizontal, radians.
    pub fn psi(&self) -> f64 {
        self.sin_psi.atan2(self.cos_psi)
    }
}

/// Cost function under which controls and Hamiltonians are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum CostRegime {
    /// Minimum time with positive cost multiplier `p0`; full throttle.
    TimeIcvn { p0: f64 },
    /// Minimum propellant with multiplier `p0f`, throttle smoothed by `delta`.
    Fuel { p0f: f64, delta: f64 },
    /// `p0·κ + (1 - κ)·u` running cost, throttle smoothed by `delta`.
    Homotopy { p0: f64, kappa: f64, delta: f64 },
}

impl CostRegime {
    pub fn delta(&self) -> Option<f64> {
        match *self {
            CostRegime::TimeIcvn { .. } => None,
            CostRegime::Fuel { delta, .. } | CostRegime::Homotopy { delta, .. } => Some(delta),
        }
    }

    fn needs_mass_costate(&self) -> bool {
        !matches!(self, CostRegime::TimeIcvn { .. })
    }

    /// Running cost `L(u)`.
    fn running_cost(&self, u: f64) -> f64 {
        match *self {
            CostRegime::TimeIcvn { p0 } => p0,
            CostRegime::Fuel { p0f, .. } => p0f * u,
            CostRegime::Homotopy { p0, kappa, .. } => p0 * kappa + (1.0 - kappa) * u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub r: f64,
    pub v: f64,
    pub omega: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostateRate {
    pub p_r: f64,
    pub p_v: f64,
    pub p_omega: f64,
    pub p_m: Option<f64>,
}

/// Norm of the primer-like steering vector `(p_v, p_omega / r)`.
fn steering_norm(costate: &Costate, r: f64) -> f64 {
    costate.p_v.hypot(costate.p_omega / r)
}

/// Thrust direction minimizing the Hamiltonian: `(sin ψ, cos ψ)` is the unit
/// vector opposite to `(p_v, -p_omega / r)`.
pub fn optimal_steering(costate: &Costate, r: f64) -> Result<(f64, f64), DynamicsError> {
    let q = steering_norm(costate, r);
    if q == 0.0 {
        return Err(DynamicsError::SingularSteering);
    }
    if !q.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok((-costate.p_v / q, costate.p_omega / r / q))
}

/// Coefficient of the throttle in the Hamiltonian.
pub fn switching_value(
    vehicle: &Vehicle,
    state: &LanderState,
    costate: &Costate,
    regime: &CostRegime,
) -> Result<f64, DynamicsError> {
    if regime.needs_mass_costate() && costate.p_m.is_none() {
        return Err(DynamicsError::MissingMassCostate);
    }
    let bracket =
        steering_norm(costate, state.r) / state.m + costate.p_m.unwrap_or(0.0) / vehicle.exhaust_speed;
    let s = -vehicle.max_thrust * bracket;
    Ok(match *regime {
        CostRegime::TimeIcvn { .. } => s,
        CostRegime::Fuel { p0f, .. } => s + p0f,
        CostRegime::Homotopy { kappa, .. } => s + (1.0 - kappa),
    })
}

/// Throttle law: full thrust for time-optimal flight, otherwise the smoothed
/// step `(1 - S / sqrt(S² + δ)) / 2`.
pub fn throttle(s: f64, regime: &CostRegime) -> f64 {
    match regime.delta() {
        None => 1.0,
        Some(delta) => 0.5 * (1.0 - s / (s * s + delta).sqrt()),
    }
}

/// Optimal control together with the switching value it was derived from.
pub fn optimal_control(
    vehicle: &Vehicle,
    state: &LanderState,
    costate: &Costate,
    regime: &CostRegime,
) -> Result<(Control, f64), DynamicsError> {
    let (sin_psi, cos_psi) = optimal_steering(costate, state.r)?;
    let s = switching_value(vehicle, state, costate, regime)?;
    Ok((
        Control {
            u: throttle(s, regime),
            sin_psi,
            cos_psi,
        },
        s,
    ))
}

/// State rate in physical time (`Forward`) or time-to-go (`Backward`).
pub fn state_rhs(
    vehicle: &Vehicle,
    state: &LanderState,
    control: &Control,
    direction: Direction,
) -> Result<StateRate, DynamicsError> {
    state.check()?;
    let LanderState { r, v, omega: w, m } = *state;
    let a = control.u * vehicle.max_thrust / m;
    let sg = direction.sign();
    Ok(StateRate {
        r: sg * v,
        v: sg * (a * control.sin_psi - 1.0 / (r * r) + r * w * w),
        omega: sg * (-(a * control.cos_psi + 2.0 * v * w) / r),
        m: sg * (-control.u * vehicle.max_thrust / vehicle.exhaust_speed),
    })
}

/// Co-state rate `-∂H/∂x` (forward) or `+∂H/∂x` (backward). The mass
/// co-state rate is produced only when `p_m` is carried.
pub fn costate_rhs(
    vehicle: &Vehicle,
    state: &LanderState,
    costate: &Costate,
    control: &Control,
    direction: Direction,
) -> Result<CostateRate, DynamicsError> {
    state.check()?;
    let LanderState { r, v, omega: w, m } = *state;
    let Costate {
        p_r,
        p_v,
        p_omega: p_w,
        p_m,
    } = *costate;
    let a = control.u * vehicle.max_thrust / m;
    let sg = direction.sign();
    let dp_r = -2.0 * p_v / (r * r * r) - p_v * w * w - p_w * (a * control.cos_psi + 2.0 * v * w) / (r * r);
    let dp_v = -p_r + 2.0 * p_w * w / r;
    let dp_w = -2.0 * p_v * r * w + 2.0 * p_w * v / r;
    let dp_m = p_m.map(|_| p_v * a * control.sin_psi / m - p_w * a * control.cos_psi / (m * r));
    Ok(CostateRate {
        p_r: sg * dp_r,
        p_v: sg * dp_v,
        p_omega: sg * dp_w,
        p_m: dp_m.map(|d| sg * d),
    })
}

pub fn hamiltonian(
    vehicle: &Vehicle,
    state: &LanderState,
    costate: &Costate,
    control: &Control,
    regime: &CostRegime,
) -> Result<f64, DynamicsError> {
    if regime.needs_mass_costate() && costate.p_m.is_none() {
        return Err(DynamicsError::MissingMassCostate);
    }
    let f = state_rhs(vehicle, state, control, Direction::Forward)?;
    Ok(regime.running_cost(control.u)
        + costate.p_r * f.r
        + costate.p_v * f.v
        + costate.p_omega * f.omega
        + costate.p_m.unwrap_or(0.0) * f.m)
}

/// Combined state/co-state vector `[r, v, ω, m, p_r, p_v, p_ω, p_m]` used by
/// the integrator. The mass co-state slot is always carried.
pub type Augmented = [f64; 8];

pub fn split(y: &Augmented) -> (LanderState, Costate) {
    (
        LanderState::new(y[0], y[1], y[2], y[3]),
        Costate::new(y[4], y[5], y[6], Some(y[7])),
    )
}

pub fn join(state: &LanderState, costate: &Costate) -> Augmented {
    [
        state.r,
        state.v,
        state.omega,
        state.m,
        costate.p_r,
        costate.p_v,
        costate.p_omega,
        costate.p_m.unwrap_or(0.0),
    ]
}

/// Closed-loop extremal vector field with the optimal control substituted.
pub fn extremal_rhs(
    vehicle: &Vehicle,
    regime: &CostRegime,
    direction: Direction,
    y: &Augmented,
) -> Result<Augmented, DynamicsError> {
    let (state, costate) = split(y);
    let (control, _) = optimal_control(vehicle, &state, &costate, regime)?;
    let ds = state_rhs(vehicle, &state, &control, direction)?;
    let dp = costate_rhs(vehicle, &state, &costate, &control, direction)?;
    Ok([
        ds.r,
        ds.v,
        ds.omega,
        ds.m,
        dp.p_r,
        dp.p_v,
        dp.p_omega,
        dp.p_m.unwrap_or(0.0),
    ])
}
