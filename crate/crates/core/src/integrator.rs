//! Adaptive Dormand–Prince 5(4) propagation of the extremal system.
//!
//! The stepping engine is generic over the dimension so it can be exercised on
//! plain test systems; [`propagate`] and [`propagate_terminal`] specialise it
//! to the augmented state/co-state vector and collect landing diagnostics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, optimal_control, split, Augmented, Control, CostRegime, Costate, Direction,
    DynamicsError, LanderState,
};
use crate::scaling::{Scales, UnitRole, Vehicle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Number of equally spaced output samples, endpoints included.
    pub sample_count: usize,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_steps: 100_000,
            sample_count: 400,
        }
    }
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let ok = |t: f64| t > 0.0 && t <= 1e-3;
        if !ok(self.abs_tol) || !ok(self.rel_tol) || self.max_steps == 0 {
            return Err(PropagationError::new(PropagationFailure::InvalidSettings, 0.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PropagationFailure {
    #[error("step budget exhausted")]
    StepBudget,
    #[error("step size underflow")]
    StepUnderflow,
    #[error("invalid time span")]
    InvalidSpan,
    #[error("invalid integration settings")]
    InvalidSettings,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Error)]
#[error("propagation failed at t = {t_reached}: {kind}")]
pub struct PropagationError {
    pub kind: PropagationFailure,
    pub t_reached: f64,
    /// Samples collected before the failure, when a trajectory was requested.
    pub partial: Option<Box<Trajectory>>,
}

impl PropagationError {
    fn new(kind: PropagationFailure, t_reached: f64) -> Self {
        Self {
            kind,
            t_reached,
            partial: None,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI step-size controller constants.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN_INV: f64 = 5.0;
const FAC_MAX_INV: f64 = 0.1;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

fn finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// One Dormand–Prince step of size `h` from `(t, y)` with `k1 = f(t, y)`.
/// Returns the fifth-order solution, its derivative (FSAL) and the embedded
/// error estimate.
pub fn dopri_step<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> Result<([f64; N], [f64; N], [f64; N]), E> {
    let k2 = f(t + C2 * h, &axpy(y, &[(h * A21, k1)]))?;
    let k3 = f(t + C3 * h, &axpy(y, &[(h * A31, k1), (h * A32, &k2)]))?;
    let k4 = f(
        t + C4 * h,
        &axpy(y, &[(h * A41, k1), (h * A42, &k2), (h * A43, &k3)]),
    )?;
    let k5 = f(
        t + C5 * h,
        &axpy(
            y,
            &[(h * A51, k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)],
        ),
    )?;
    let k6 = f(
        t + h,
        &axpy(
            y,
            &[
                (h * A61, k1),
                (h * A62, &k2),
                (h * A63, &k3),
                (h * A64, &k4),
                (h * A65, &k5),
            ],
        ),
    )?;
    let y_new = axpy(
        y,
        &[
            (h * A71, k1),
            (h * A73, &k3),
            (h * A74, &k4),
            (h * A75, &k5),
            (h * A76, &k6),
        ],
    );
    let k7 = f(t + h, &y_new)?;
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    Ok((y_new, k7, err))
}

fn error_norm<const N: usize>(
    err: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    s: &IntegrationSettings,
) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let sc = s.abs_tol + s.rel_tol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

fn initial_step<const N: usize, E>(
    f: &mut impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    span: f64,
    s: &IntegrationSettings,
) -> f64 {
    let scaled = |v: &[f64; N]| {
        let sum: f64 = (0..N)
            .map(|i| (v[i] / (s.abs_tol + s.rel_tol * y[i].abs())).powi(2))
            .sum();
        (sum / N as f64).sqrt()
    };
    let d0 = scaled(y);
    let d1 = scaled(f0);
    let h0 = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1 = axpy(y, &[(h0, f0)]);
    let d2 = match f(t + h0, &y1) {
        Ok(f1) => {
            let mut diff = [0.0; N];
            for i in 0..N {
                diff[i] = f1[i] - f0[i];
            }
            scaled(&diff) / h0
        }
        Err(_) => return (h0 * 1e-3).min(span),
    };
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Accepted-step callback payload.
pub struct StepEvent<'a, const N: usize> {
    pub t: f64,
    pub y: &'a [f64; N],
    /// Index into the output grid when the step landed on a grid point.
    pub grid_index: Option<usize>,
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1 > t0`, forcing steps to land
/// on every `grid` time. The observer sees the initial point and every
/// accepted step. Returns the final value and the accepted-step count.
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> Result<[f64; N], DynamicsError>,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    grid: &[f64],
    settings: &IntegrationSettings,
    mut observer: impl FnMut(StepEvent<'_, N>),
) -> Result<([f64; N], usize), PropagationError> {
    settings.validate()?;
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(PropagationError::new(PropagationFailure::InvalidSpan, t0));
    }
    let at_grid = |t: f64, next: usize| (next < grid.len() && grid[next] == t).then_some(next);
    let mut next_grid = 0;
    let gi = at_grid(t0, next_grid);
    if gi.is_some() {
        next_grid += 1;
    }
    observer(StepEvent {
        t: t0,
        y: &y0,
        grid_index: gi,
    });
    if t1 == t0 {
        return Ok((y0, 0));
    }

    let fail = |kind: PropagationFailure, t: f64| PropagationError::new(kind, t);
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y).map_err(|e| fail(e.into(), t))?;
    let mut h = initial_step(&mut f, t, &y, &k1, t1 - t0, settings);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut accepted = 0usize;
    let mut attempts = 0usize;

    loop {
        // the next hard stop: a grid point or the end of the span
        let stop = if next_grid < grid.len() {
            grid[next_grid].min(t1)
        } else {
            t1
        };
        let mut h_try = h;
        let mut lands = false;
        if t + h_try >= stop || (stop - t - h_try) < 1e-12 * stop.abs().max(1.0) {
            h_try = stop - t;
            lands = true;
        }
        if h_try <= 16.0 * f64::EPSILON * t.abs().max(1.0) && !lands {
            return Err(fail(PropagationFailure::StepUnderflow, t));
        }
        attempts += 1;
        if attempts > settings.max_steps.saturating_mul(4) || accepted >= settings.max_steps {
            return Err(fail(PropagationFailure::StepBudget, t));
        }
        match dopri_step(&mut f, t, &y, &k1, h_try) {
            Ok((y_new, k_new, err)) if finite(&y_new) && finite(&k_new) => {
                let en = error_norm(&err, &y, &y_new, settings);
                let fac11 = en.powf(EXPO1);
                if en <= 1.0 {
                    let mut fac = fac11 / fac_old.powf(BETA);
                    fac = (fac / SAFETY).clamp(FAC_MAX_INV, FAC_MIN_INV);
                    let mut h_new = h_try / fac;
                    if last_rejected {
                        h_new = h_new.min(h_try);
                    }
                    fac_old = en.max(1e-4);
                    last_rejected = false;
                    accepted += 1;
                    t = if lands { stop } else { t + h_try };
                    y = y_new;
                    k1 = k_new;
                    let gi = if lands { at_grid(t, next_grid) } else { None };
                    if gi.is_some() {
                        next_grid += 1;
                    }
                    observer(StepEvent {
                        t,
                        y: &y,
                        grid_index: gi,
                    });
                    if t >= t1 {
                        return Ok((y, accepted));
                    }
                    // keep the controller's proposal when a grid clip shortened the step
                    h = if lands { h_new.max(h) } else { h_new };
                } else {
                    h = h_try / (fac11 / SAFETY).min(FAC_MIN_INV);
                    last_rejected = true;
                }
            }
            Ok(_) | Err(_) => {
                // stage evaluation left the domain: shrink hard and retry
                h = 0.2 * h_try;
                last_rejected = true;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    let kind = match dopri_step(&mut f, t, &y, &k1, h_try) {
                        Err(e) => PropagationFailure::Dynamics(e),
                        Ok(_) => PropagationFailure::StepUnderflow,
                    };
                    return Err(fail(kind, t));
                }
            }
        }
    }
}

/// Time-sampled extremal with landing diagnostics.
///
/// `times` are in the integration variable: physical time for forward
/// propagation, time-to-go for backward propagation until converted with
/// [`Trajectory::into_physical_time`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub direction: Direction,
    pub regime: CostRegime,
    pub times: Vec<f64>,
    pub states: Vec<LanderState>,
    pub costates: Vec<Costate>,
    pub controls: Vec<Control>,
    pub switching: Vec<f64>,
    pub hamiltonian_trace: Vec<f64>,
    /// Minimum radius over every accepted step, refined between steps.
    pub min_radius: f64,
    /// Sign changes of the sampled switching function.
    pub switch_count: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Re-indexes a time-to-go trajectory by physical time `t = t_f - tau`.
    pub fn into_physical_time(mut self, t_final: f64) -> Self {
        if self.direction == Direction::Backward {
            self.times.iter_mut().for_each(|t| *t = t_final - *t);
            self.times.reverse();
            self.states.reverse();
            self.costates.reverse();
            self.controls.reverse();
            self.switching.reverse();
            self.hamiltonian_trace.reverse();
            self.direction = Direction::Forward;
        }
        self
    }

    /// Times at which the sampled switching function changes sign, located by
    /// linear interpolation between adjacent samples.
    pub fn switch_times(&self) -> Vec<f64> {
        self.switching
            .windows(2)
            .zip(self.times.windows(2))
            .filter(|(s, _)| s[0] * s[1] < 0.0)
            .map(|(s, t)| t[0] + (t[1] - t[0]) * s[0] / (s[0] - s[1]))
            .collect()
    }

    /// Writes the trajectory with columns
    /// `t_s,r_km,h_km,v_mps,omega_radps,m_kg,u,psi_deg,S,H`.
    pub fn write_csv<W: Write>(&self, mut w: W, scales: &Scales) -> io::Result<()> {
        writeln!(w, "t_s,r_km,h_km,v_mps,omega_radps,m_kg,u,psi_deg,S,H")?;
        for i in 0..self.len() {
            let st = &self.states[i];
            let r_km = scales.dimensionalize(st.r, UnitRole::Length) / 1e3;
            let h_km = scales.dimensionalize(st.r - 1.0, UnitRole::Length) / 1e3;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                scales.dimensionalize(self.times[i], UnitRole::Time),
                r_km,
                h_km,
                scales.dimensionalize(st.v, UnitRole::Speed),
                scales.dimensionalize(st.omega, UnitRole::AngularRate),
                scales.dimensionalize(st.m, UnitRole::Mass),
                self.controls[i].u,
                self.controls[i].psi().to_degrees(),
                self.switching[i],
                self.hamiltonian_trace[i],
            )?;
        }
        Ok(())
    }
}

/// Final sample of a trajectory.
pub fn terminal_point(trajectory: &Trajectory) -> (LanderState, Costate) {
    let last = trajectory.len() - 1;
    (trajectory.states[last], trajectory.costates[last])
}

/// Running minimum of the radius over accepted steps, with a parabolic fit
/// through three consecutive steps around every interior local minimum.
#[derive(Debug, Clone)]
struct RadiusTracker {
    min: f64,
    window: [(f64, f64); 3],
    filled: usize,
}

impl RadiusTracker {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            window: [(0.0, 0.0); 3],
            filled: 0,
        }
    }

    fn push(&mut self, t: f64, r: f64) {
        self.min = self.min.min(r);
        self.window.rotate_left(1);
        self.window[2] = (t, r);
        self.filled = (self.filled + 1).min(3);
        if self.filled == 3 {
            let [(t0, r0), (t1, r1), (t2, r2)] = self.window;
            if r1 < r0 && r1 <= r2 {
                if let Some(v) = parabola_minimum(t0, r0, t1, r1, t2, r2) {
                    self.min = self.min.min(v);
                }
            }
        }
    }
}

fn parabola_minimum(t0: f64, r0: f64, t1: f64, r1: f64, t2: f64, r2: f64) -> Option<f64> {
    let d01 = (r1 - r0) / (t1 - t0);
    let d12 = (r2 - r1) / (t2 - t1);
    let a = (d12 - d01) / (t2 - t0);
    if !(a > 0.0) {
        return None;
    }
    let b = d01 - a * (t0 + t1);
    let tv = -b / (2.0 * a);
    if !(tv >= t0 && tv <= t2) {
        return None;
    }
    let v = r0 + d01 * (tv - t0) + a * (tv - t0) * (tv - t1);
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalPoint {
    pub y: Augmented,
    pub min_radius: f64,
    pub steps: usize,
}

fn extremal_field<'a>(
    vehicle: &'a Vehicle,
    regime: &CostRegime,
    direction: Direction,
) -> impl FnMut(f64, &Augmented) -> Result<Augmented, DynamicsError> + 'a {
    let regime = *regime;
    move |_, y| dynamics::extremal_rhs(vehicle, &regime, direction, y)
}

/// Propagates the extremal over `duration ≥ 0` without sampling; used inside
/// shooting residuals.
pub fn propagate_terminal(
    vehicle: &Vehicle,
    regime: &CostRegime,
    direction: Direction,
    initial: &Augmented,
    duration: f64,
    settings: &IntegrationSettings,
) -> Result<TerminalPoint, PropagationError> {
    let mut radius = RadiusTracker::new();
    let (y, steps) = integrate(
        extremal_field(vehicle, regime, direction),
        0.0,
        *initial,
        duration,
        &[],
        settings,
        |ev| radius.push(ev.t, ev.y[0]),
    )?;
    Ok(TerminalPoint {
        y,
        min_radius: radius.min,
        steps,
    })
}

/// Propagates the extremal over `[t_start, t_end]` and samples it on an
/// equally spaced grid of `settings.sample_count` points.
pub fn propagate(
    vehicle: &Vehicle,
    regime: &CostRegime,
    direction: Direction,
    initial: &Augmented,
    t_start: f64,
    t_end: f64,
    settings: &IntegrationSettings,
) -> Result<Trajectory, PropagationError> {
    let n = settings.sample_count.max(2);
    let grid: Vec<f64> = if t_end > t_start {
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    t_end
                } else {
                    t_start + (t_end - t_start) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    } else {
        vec![t_start]
    };
    let mut traj = Trajectory {
        direction,
        regime: *regime,
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        costates: Vec::with_capacity(grid.len()),
        controls: Vec::with_capacity(grid.len()),
        switching: Vec::with_capacity(grid.len()),
        hamiltonian_trace: Vec::with_capacity(grid.len()),
        min_radius: f64::INFINITY,
        switch_count: 0,
    };
    let mut radius = RadiusTracker::new();
    let mut sample_error = None;
    let result = integrate(
        extremal_field(vehicle, regime, direction),
        t_start,
        *initial,
        t_end,
        &grid,
        settings,
        |ev| {
            radius.push(ev.t, ev.y[0]);
            if ev.grid_index.is_some() && sample_error.is_none() {
                if let Err(e) = push_sample(&mut traj, vehicle, ev.t, ev.y) {
                    sample_error = Some(e);
                }
            }
        },
    );
    traj.min_radius = radius.min;
    traj.switch_count = traj
        .switching
        .windows(2)
        .filter(|s| s[0] * s[1] < 0.0)
        .count();
    if let CostRegime::TimeIcvn { .. } = regime {
        let near = traj.switching.iter().filter(|s| s.abs() < 1e-10).count();
        if near > 0 {
            log::warn!("{near} samples with |S| < 1e-10 on a time-optimal extremal");
        }
    }
    match (result, sample_error) {
        (Ok(_), None) => Ok(traj),
        (Ok(_), Some(e)) => Err(PropagationError {
            kind: e.into(),
            t_reached: t_end,
            partial: Some(Box::new(traj)),
        }),
        (Err(mut e), _) => {
            e.partial = Some(Box::new(traj));
            Err(e)
        }
    }
}

fn push_sample(
    traj: &mut Trajectory,
    vehicle: &Vehicle,
    t: f64,
    y: &Augmented,
) -> Result<(), DynamicsError> {
    let (state, costate) = split(y);
    let (control, s) = optimal_control(vehicle, &state, &costate, &traj.regime)?;
    let h = dynamics::hamiltonian(vehicle, &state, &costate, &control, &traj.regime)?;
    traj.times.push(t);
    traj.states.push(state);
    traj.costates.push(costate);
    traj.controls.push(control);
    traj.switching.push(s);
    traj.hamiltonian_trace.push(h);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{state_rhs, StateRate};
    use std::f64::consts::PI;

    fn vehicle() -> Vehicle {
        Vehicle {
            max_thrust: 1.9,
            exhaust_speed: 1.75,
        }
    }

    fn ballistic(y: &[f64; 4], dir: Direction) -> Result<[f64; 4], DynamicsError> {
        let st = LanderState::new(y[0], y[1], y[2], y[3]);
        let coast = Control {
            u: 0.0,
            sin_psi: 1.0,
            cos_psi: 0.0,
        };
        let StateRate { r, v, omega, m } = state_rhs(&vehicle(), &st, &coast, dir)?;
        Ok([r, v, omega, m])
    }

    fn coast(y0: [f64; 4], span: f64, s: &IntegrationSettings) -> [f64; 4] {
        integrate(
            |_, y| ballistic(y, Direction::Forward),
            0.0,
            y0,
            span,
            &[],
            s,
            |_| {},
        )
        .unwrap()
        .0
    }

    #[test]
    fn circular_orbit_closes() {
        let y0 = [1.0, 0.0, 1.0, 1.0];
        let y = coast(y0, 2.0 * PI, &IntegrationSettings::default());
        for i in 0..4 {
            assert!((y[i] - y0[i]).abs() < 1e-7, "{:?}", y);
        }
    }

    #[test]
    fn ballistic_invariants_are_conserved() {
        // eccentric orbit: periapsis above the surface
        let y0 = [1.1, 0.05, 0.85, 1.0];
        let st0 = LanderState::new(y0[0], y0[1], y0[2], y0[3]);
        let e0 = st0.orbital_energy();
        let a = -1.0 / (2.0 * e0);
        let period = 2.0 * PI * a.powf(1.5);
        let mut max_drift: f64 = 0.0;
        integrate(
            |_, y| ballistic(y, Direction::Forward),
            0.0,
            y0,
            period,
            &[],
            &IntegrationSettings::default(),
            |ev| {
                let st = LanderState::new(ev.y[0], ev.y[1], ev.y[2], ev.y[3]);
                max_drift = max_drift
                    .max((st.orbital_energy() - e0).abs())
                    .max((st.angular_momentum() - st0.angular_momentum()).abs());
            },
        )
        .unwrap();
        assert!(max_drift <= 1e-8, "drift {max_drift}");
    }

    #[test]
    fn fifth_order_step_convergence() {
        // fixed-step composition: halving h divides the global error by ~2^5
        let y0 = [1.1, 0.05, 0.85, 1.0];
        let span = 1.5;
        let reference = coast(
            y0,
            span,
            &IntegrationSettings {
                abs_tol: 1e-14,
                rel_tol: 1e-14,
                ..Default::default()
            },
        );
        let run = |n: usize| {
            let h = span / n as f64;
            let mut y = y0;
            let mut f = |_: f64, y: &[f64; 4]| ballistic(y, Direction::Forward);
            for k in 0..n {
                let k1 = f(0.0, &y).unwrap();
                y = dopri_step(&mut f, k as f64 * h, &y, &k1, h).unwrap().0;
            }
            (0..4).map(|i| (y[i] - reference[i]).abs()).fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (run(10), run(20), run(40));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((16.0..=64.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let y0 = [1.1, 0.05, 0.85, 1.0];
        let a = -1.0 / (2.0 * LanderState::new(1.1, 0.05, 0.85, 1.0).orbital_energy());
        let period = 2.0 * PI * a.powf(1.5);
        let err = |tol: f64| {
            let s = IntegrationSettings {
                abs_tol: tol,
                rel_tol: tol,
                ..Default::default()
            };
            let y = coast(y0, period, &s);
            (0..4).map(|i| (y[i] - y0[i]).abs()).fold(0.0, f64::max)
        };
        let (a, b, c) = (err(1e-6), err(1e-8), err(1e-10));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    fn sample_extremal() -> Augmented {
        [1.0, 0.0, 0.0, 0.6, 0.9, -0.3, 0.3, 0.0]
    }

    #[test]
    fn forward_then_backward_recovers_initial_point() {
        let regime = CostRegime::Fuel { p0f: 0.8, delta: 1e-2 };
        let y0 = [1.05, -0.01, 0.2, 1.0, 0.4, -0.8, 0.3, 0.35];
        let s = IntegrationSettings::default();
        let fwd = propagate_terminal(&vehicle(), &regime, Direction::Forward, &y0, 0.3, &s).unwrap();
        let back =
            propagate_terminal(&vehicle(), &regime, Direction::Backward, &fwd.y, 0.3, &s).unwrap();
        for i in 0..8 {
            assert!((back.y[i] - y0[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn trajectory_sampling_and_terminal_point() {
        let regime = CostRegime::TimeIcvn { p0: 0.6 };
        let s = IntegrationSettings {
            sample_count: 50,
            ..Default::default()
        };
        let y0 = sample_extremal();
        let traj = propagate(&vehicle(), &regime, Direction::Backward, &y0, 0.0, 0.3, &s).unwrap();
        assert_eq!(traj.len(), 50);
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(*traj.times.last().unwrap(), 0.3);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        let min_sample = traj.states.iter().map(|s| s.r).fold(f64::INFINITY, f64::min);
        assert!(traj.min_radius <= min_sample);
        assert_eq!(traj.switch_count, 0);
        assert!(traj.controls.iter().all(|c| c.u == 1.0));

        let term = propagate_terminal(&vehicle(), &regime, Direction::Backward, &y0, 0.3, &s).unwrap();
        let (st, p) = terminal_point(&traj);
        assert!((st.r - term.y[0]).abs() < 1e-8);
        assert!((p.p_omega - term.y[6]).abs() < 1e-8);

        let phys = traj.clone().into_physical_time(0.3);
        assert_eq!(phys.states[0], *traj.states.last().unwrap());
        assert!(phys.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(phys.times[0], 0.0);
    }

    #[test]
    fn zero_span_and_single_sample() {
        let regime = CostRegime::TimeIcvn { p0: 0.6 };
        let y0 = sample_extremal();
        let s = IntegrationSettings::default();
        let traj = propagate(&vehicle(), &regime, Direction::Forward, &y0, 0.2, 0.2, &s).unwrap();
        assert_eq!(traj.len(), 1);
        let (st, p) = terminal_point(&traj);
        assert_eq!(crate::dynamics::join(&st, &p), y0);
    }

    #[test]
    fn subsurface_minimum_between_steps_is_found() {
        // parabola with a vertex between samples
        let v = parabola_minimum(0.0, 1.0, 1.0, 0.2, 2.0, 0.6).unwrap();
        // through (0,1),(1,.2),(2,.6): r = 0.6t² - 1.4t + 1, vertex t = 7/6
        assert!((v - (1.0 - 1.4 * 1.4 / 2.4)).abs() < 1e-14);
        assert!(parabola_minimum(0.0, 1.0, 1.0, 2.0, 2.0, 3.0).is_none());
    }

    #[test]
    fn failure_carries_partial_trajectory() {
        // forward burn longer than the propellant lasts drives m through zero
        let regime = CostRegime::TimeIcvn { p0: 0.6 };
        let y0 = [1.2, 0.0, 0.1, 1.0, 0.1, -0.9, 0.2, 0.0];
        let s = IntegrationSettings {
            sample_count: 100,
            ..Default::default()
        };
        let burnout = 1.0 / vehicle().max_mass_flow();
        let err = propagate(&vehicle(), &regime, Direction::Forward, &y0, 0.0, 2.0 * burnout, &s)
            .unwrap_err();
        assert!(err.t_reached < burnout * 1.0001);
        let partial = err.partial.unwrap();
        assert!(!partial.is_empty() && partial.len() < 100);
    }

    #[test]
    fn rejects_bad_span_and_settings() {
        let regime = CostRegime::TimeIcvn { p0: 0.6 };
        let y0 = sample_extremal();
        let s = IntegrationSettings::default();
        let e = propagate_terminal(&vehicle(), &regime, Direction::Forward, &y0, -1.0, &s).unwrap_err();
        assert_eq!(e.kind, PropagationFailure::InvalidSpan);
        let bad = IntegrationSettings {
            abs_tol: 0.1,
            ..s
        };
        let e = propagate_terminal(&vehicle(), &regime, Direction::Forward, &y0, 1.0, &bad).unwrap_err();
        assert_eq!(e.kind, PropagationFailure::InvalidSettings);
    }

    #[test]
    fn csv_has_contract_columns() {
        let regime = CostRegime::TimeIcvn { p0: 0.6 };
        let s = IntegrationSettings {
            sample_count: 5,
            ..Default::default()
        };
        let traj =
            propagate(&vehicle(), &regime, Direction::Backward, &sample_extremal(), 0.0, 0.1, &s)
                .unwrap()
                .into_physical_time(0.1);
        let scales = Scales::new(&Default::default(), 500.0).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &scales).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t_s,r_km,h_km,v_mps,omega_radps,m_kg,u,psi_deg,S,H"
        );
        let last: Vec<f64> = text
            .lines()
            .last()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(last.len(), 10);
        // touchdown row: altitude zero, full throttle
        assert!(last[2].abs() < 1e-9);
        assert_eq!(last[6], 1.0);
        assert_eq!(text.lines().count(), 6);
    }
}
