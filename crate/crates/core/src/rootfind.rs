//! Powell dogleg trust-region solver for square nonlinear systems, with a
//! central-difference Jacobian rebuilt at every iteration.

use std::fmt::Display;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Termination tolerance on the infinity norm of the residual.
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Relative perturbation for finite differences.
    pub fd_relative_step: f64,
    /// Initial trust radius, relative to `max(1, ‖D z0‖)`.
    pub trust_radius_init: f64,
    /// Relative step size below which the iteration is considered stalled.
    pub step_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            max_iterations: 300,
            fd_relative_step: f64::EPSILON.cbrt(),
            trust_radius_init: 1.0,
            step_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    StalledStep,
    LinearSolveFailure,
    PropagationFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub z_final: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Residual calls, Jacobian columns included.
    pub function_evaluations: usize,
    pub final_residual_norm: f64,
    /// Last residual-evaluation error, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum JacobianError {
    #[error("residual evaluation failed on both sides of component {index}: {message}")]
    Evaluation { index: usize, message: String },
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn eval<E: Display>(
    residual: &mut impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z: &[f64],
    n: usize,
    evals: &mut usize,
) -> Result<Vec<f64>, String> {
    *evals += 1;
    match residual(z) {
        Ok(f) if f.len() != n => Err(format!("residual has {} components, expected {n}", f.len())),
        Ok(f) if f.iter().all(|x| x.is_finite()) => Ok(f),
        Ok(_) => Err("non-finite residual".to_owned()),
        Err(e) => Err(e.to_string()),
    }
}

/// Central-difference Jacobian of `residual` at `z`, where `f0 = residual(z)`.
/// A column whose perturbation fails on one side falls back to a one-sided
/// difference. Returns the matrix and the number of residual calls made.
pub fn fd_jacobian<E: Display>(
    mut residual: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z: &[f64],
    f0: &[f64],
    relative_step: f64,
) -> Result<(DMatrix<f64>, usize), JacobianError> {
    let mut evals = 0;
    let jac = jacobian_counted(&mut residual, z, f0, relative_step, &mut evals)?;
    Ok((jac, evals))
}

fn jacobian_counted<E: Display>(
    residual: &mut impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z: &[f64],
    f0: &[f64],
    relative_step: f64,
    evals: &mut usize,
) -> Result<DMatrix<f64>, JacobianError> {
    let n = z.len();
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut zp = z.to_vec();
    for j in 0..n {
        let h = relative_step * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let hp = zp[j] - z[j];
        let plus = eval(residual, &zp, m, evals);
        zp[j] = z[j] - h;
        let hm = z[j] - zp[j];
        let minus = eval(residual, &zp, m, evals);
        zp[j] = z[j];
        let col: Vec<f64> = match (plus, minus) {
            (Ok(fp), Ok(fm)) => (0..m).map(|i| (fp[i] - fm[i]) / (hp + hm)).collect(),
            (Ok(fp), Err(_)) => (0..m).map(|i| (fp[i] - f0[i]) / hp).collect(),
            (Err(_), Ok(fm)) => (0..m).map(|i| (f0[i] - fm[i]) / hm).collect(),
            (Err(message), Err(_)) => return Err(JacobianError::Evaluation { index: j, message }),
        };
        jac.set_column(j, &DVector::from_vec(col));
    }
    Ok(jac)
}

/// Scaled dogleg step inside a trust region of radius `delta`, measured in
/// the `‖D p‖` norm. Returns `None` when the model has no descent direction.
fn dogleg(
    jac: &DMatrix<f64>,
    f: &DVector<f64>,
    diag: &DVector<f64>,
    newton: Option<&DVector<f64>>,
    delta: f64,
) -> Option<DVector<f64>> {
    if let Some(p) = newton {
        if p.component_mul(diag).norm() <= delta {
            return Some(p.clone());
        }
    }
    // steepest descent of ½‖F‖² in scaled variables w = D p
    let g = (jac.transpose() * f).component_div(diag);
    let gnorm = g.norm();
    if gnorm == 0.0 || !gnorm.is_finite() {
        return None;
    }
    let jg = jac * g.component_div(diag);
    let jg2 = jg.norm_squared();
    let unscale = |w: DVector<f64>| w.component_div(diag);
    if jg2 == 0.0 {
        return Some(unscale(-&g * (delta / gnorm)));
    }
    let alpha = gnorm * gnorm / jg2;
    let cauchy = -&g * alpha;
    let cnorm = cauchy.norm();
    let newton_w = match newton {
        Some(p) if cnorm < delta => p.component_mul(diag),
        _ => return Some(unscale(-&g * (delta / gnorm))),
    };
    // point on the segment cauchy → newton with norm delta
    let d = &newton_w - &cauchy;
    let a = d.norm_squared();
    let b = 2.0 * cauchy.dot(&d);
    let c = cnorm * cnorm - delta * delta;
    let tau = if a > 0.0 {
        (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)
    } else {
        0.0
    };
    Some(unscale(cauchy + d * tau.clamp(0.0, 1.0)))
}

/// Solves `residual(z) = 0` from `z0`.
pub fn solve<E: Display>(
    mut residual: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z0: &[f64],
    settings: &SolverSettings,
) -> SolveReport {
    let n = z0.len();
    let mut evals = 0usize;
    let mut z = z0.to_vec();
    let report = |z: Vec<f64>, status, iterations, evals, norm, message| SolveReport {
        z_final: z,
        status,
        iterations,
        function_evaluations: evals,
        final_residual_norm: norm,
        message,
    };
    let mut f = match eval(&mut residual, &z, n, &mut evals) {
        Ok(f) => f,
        Err(msg) => {
            return report(
                z,
                SolveStatus::PropagationFailure,
                0,
                evals,
                f64::INFINITY,
                Some(msg),
            )
        }
    };
    let tol = settings.residual_tol;
    if inf_norm(&f) <= tol {
        let norm = inf_norm(&f);
        return report(z, SolveStatus::Converged, 0, evals, norm, None);
    }

    let mut diag = DVector::from_element(n, 0.0);
    let mut delta = 0.0;
    let mut last_message = None;
    for iteration in 1..=settings.max_iterations {
        let jac = match jacobian_counted(&mut residual, &z, &f, settings.fd_relative_step, &mut evals)
        {
            Ok(j) => j,
            Err(e) => {
                let norm = inf_norm(&f);
                return report(
                    z,
                    SolveStatus::PropagationFailure,
                    iteration,
                    evals,
                    norm,
                    Some(e.to_string()),
                );
            }
        };
        for j in 0..n {
            let cn = jac.column(j).norm();
            let cn = if cn > 0.0 { cn } else { 1.0 };
            diag[j] = if iteration == 1 { cn } else { diag[j].max(cn) };
        }
        let zv = DVector::from_column_slice(&z);
        if iteration == 1 {
            let dz = zv.component_mul(&diag).norm();
            delta = settings.trust_radius_init * if dz > 0.0 { dz.max(1.0) } else { 1.0 };
        }
        let fv = DVector::from_column_slice(&f);
        let newton = jac.clone().lu().solve(&(-&fv)).filter(|p| p.iter().all(|x| x.is_finite()));
        let fnorm2 = fv.norm_squared();

        // inner loop: shrink until a step is accepted
        loop {
            let Some(step) = dogleg(&jac, &fv, &diag, newton.as_ref(), delta) else {
                let norm = inf_norm(&f);
                return report(
                    z,
                    SolveStatus::LinearSolveFailure,
                    iteration,
                    evals,
                    norm,
                    last_message,
                );
            };
            let pnorm = step.component_mul(&diag).norm();
            let z_scale = zv.component_mul(&diag).norm();
            let trial: Vec<f64> = (0..n).map(|i| z[i] + step[i]).collect();
            let predicted = fnorm2 - (&fv + &jac * &step).norm_squared();
            let (ratio, f_trial) = match eval(&mut residual, &trial, n, &mut evals) {
                Ok(ft) => {
                    let actual = fnorm2 - ft.iter().map(|x| x * x).sum::<f64>();
                    let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };
                    (ratio, Some(ft))
                }
                Err(msg) => {
                    last_message = Some(msg);
                    (-1.0, None)
                }
            };
            if ratio < 0.25 {
                delta = 0.5 * delta.min(pnorm);
            } else if ratio >= 0.75 || (ratio >= 0.5 && newton.is_some()) {
                delta = delta.max(2.0 * pnorm);
            }
            if ratio >= 1e-4 {
                z = trial;
                f = f_trial.expect("accepted step has a residual");
                let norm = inf_norm(&f);
                if norm <= tol {
                    return report(z, SolveStatus::Converged, iteration, evals, norm, None);
                }
                if pnorm <= settings.step_tol * (settings.step_tol + z_scale) {
                    return stalled(z, iteration, evals, norm, tol, last_message);
                }
                break;
            }
            if delta <= settings.step_tol * (settings.step_tol + z_scale) {
                let norm = inf_norm(&f);
                return stalled(z, iteration, evals, norm, tol, last_message);
            }
        }
    }
    let norm = inf_norm(&f);
    report(
        z,
        SolveStatus::MaxIterations,
        settings.max_iterations,
        evals,
        norm,
        last_message,
    )
}

/// A stalled iterate still counts as converged within the noise allowance.
fn stalled(
    z: Vec<f64>,
    iterations: usize,
    evals: usize,
    norm: f64,
    tol: f64,
    message: Option<String>,
) -> SolveReport {
    let status = if norm <= 10.0 * tol {
        SolveStatus::Converged
    } else {
        SolveStatus::StalledStep
    };
    SolveReport {
        z_final: z,
        status,
        iterations,
        function_evaluations: evals,
        final_residual_norm: norm,
        message,
    }
}
