//! Continuation from the time-optimal landing to the fuel-optimal one: first
//! in the cost weight `κ` at fixed smoothing, then in the smoothing `δ`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Direction;
use crate::shooting::{
    self, GuessOptions, LandingProblem, ShootingConfig, ShootingError, ShootingKind,
    ShootingSolution, ShootingVector, SolutionRecord, Stage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub kappa_sequence: Vec<f64>,
    pub delta_sequence: Vec<f64>,
    pub max_backtracks: usize,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        Self {
            kappa_sequence: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            delta_sequence: (1..=9).map(|k| 10f64.powi(-k)).collect(),
            max_backtracks: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("{0} sequence is empty")]
    Empty(&'static str),
    #[error("{0} sequence must be positive and strictly decreasing")]
    NotDecreasing(&'static str),
    #[error("kappa sequence must start at 1, got {0}")]
    KappaStart(f64),
    #[error("kappa values must not exceed 1")]
    KappaRange,
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (name, seq) in [("kappa", &self.kappa_sequence), ("delta", &self.delta_sequence)] {
            if seq.is_empty() {
                return Err(ScheduleError::Empty(name));
            }
            let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
            if !decreasing || !seq.iter().all(|&x| x > 0.0 && x.is_finite()) {
                return Err(ScheduleError::NotDecreasing(name));
            }
        }
        if self.kappa_sequence[0] != 1.0 {
            return Err(ScheduleError::KappaStart(self.kappa_sequence[0]));
        }
        if self.kappa_sequence.iter().any(|&k| k > 1.0) {
            return Err(ScheduleError::KappaRange);
        }
        Ok(())
    }

    /// Stage parameters in order: the κ path at the first δ, then the δ path
    /// at the last κ.
    pub fn targets(&self) -> Vec<StageParams> {
        let delta0 = self.delta_sequence[0];
        let kappa_end = *self.kappa_sequence.last().expect("validated");
        let kappa_path = self.kappa_sequence.iter().map(|&kappa| StageParams {
            kappa,
            delta: delta0,
        });
        let delta_path = self.delta_sequence[1..].iter().map(|&delta| StageParams {
            kappa: kappa_end,
            delta,
        });
        kappa_path.chain(delta_path).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub kappa: f64,
    pub delta: f64,
}

impl StageParams {
    fn stage(self, p0: f64) -> Stage {
        Stage::Homotopy {
            p0,
            kappa: self.kappa,
            delta: self.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("backtracking budget of {budget} exhausted")]
pub struct BudgetExhausted {
    pub budget: usize,
}

/// Intermediate parameters between the last good stage and a failed one:
/// the geometric mean of whichever parameter changed. `used` counts
/// consecutive failures and is incremented here.
pub fn backtrack(
    good: StageParams,
    failed: StageParams,
    used: &mut usize,
    budget: usize,
) -> Result<StageParams, BudgetExhausted> {
    *used += 1;
    if *used >= budget {
        return Err(BudgetExhausted { budget });
    }
    Ok(if failed.kappa != good.kappa {
        StageParams {
            kappa: (good.kappa * failed.kappa).sqrt(),
            delta: failed.delta,
        }
    } else {
        StageParams {
            kappa: failed.kappa,
            delta: (good.delta * failed.delta).sqrt(),
        }
    })
}

/// One attempted stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub kappa: f64,
    pub delta: f64,
    pub converged: bool,
    pub t_f_s: f64,
    pub fuel_kg: Option<f64>,
    pub iterations: usize,
    pub function_evaluations: usize,
    /// Consecutive failures preceding this attempt.
    pub backtracks: usize,
    pub switch_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyTrace {
    pub direction: Direction,
    pub p0: f64,
    pub seed: SolutionRecord,
    pub stages: Vec<StageRecord>,
    pub final_solution: Option<SolutionRecord>,
}

impl HomotopyTrace {
    pub fn converged_stages(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.converged)
    }
}

#[derive(Debug, Error)]
pub enum HomotopyError {
    #[error("time-optimal seed failed: {0}")]
    Seed(String),
    #[error("{0}")]
    Direct(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
    #[error("homotopy failed at kappa = {kappa}, delta = {delta}: {source}")]
    Stage {
        kappa: f64,
        delta: f64,
        source: BudgetExhausted,
        trace: Box<HomotopyTrace>,
    },
}

impl HomotopyError {
    pub fn trace(&self) -> Option<&HomotopyTrace> {
        match self {
            HomotopyError::Stage { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HomotopyRun {
    pub trace: HomotopyTrace,
    pub seed: ShootingSolution,
    /// Converged stage solutions in order; the last one is fuel-optimal.
    pub stages: Vec<ShootingSolution>,
}

impl HomotopyRun {
    pub fn final_solution(&self) -> &ShootingSolution {
        self.stages.last().expect("a finished run has stages")
    }
}

/// Seed and settings for a homotopy run.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyOptions {
    pub schedule: HomotopySchedule,
    pub config: ShootingConfig,
    pub remedy: bool,
    /// Random guesses allowed for the time-optimal seed.
    pub seed_attempts: usize,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self {
            schedule: HomotopySchedule::default(),
            config: ShootingConfig::default(),
            remedy: true,
            seed_attempts: 20,
        }
    }
}

fn stage_record(
    problem: &LandingProblem,
    params: StageParams,
    sol: &ShootingSolution,
    backtracks: usize,
) -> StageRecord {
    StageRecord {
        kappa: params.kappa,
        delta: params.delta,
        converged: sol.succeeded(),
        t_f_s: problem.seconds(sol.t_f),
        fuel_kg: sol.final_mass().map(|m| problem.kilograms(1.0 - m)),
        iterations: sol.report.iterations,
        function_evaluations: sol.report.function_evaluations,
        backtracks,
        switch_count: sol.trajectory.as_ref().map(|t| t.switch_count),
    }
}

/// Solves the fuel-optimal landing by continuation from a time-optimal seed
/// solved backward (PIIM) or forward (SICVN).
pub fn solve_foslp<R: Rng + ?Sized>(
    problem: &LandingProblem,
    direction: Direction,
    options: &HomotopyOptions,
    rng: &mut R,
) -> Result<HomotopyRun, HomotopyError> {
    options.schedule.validate()?;
    let (seed_kind, kind) = match direction {
        Direction::Backward => (ShootingKind::BwdPiimTime, ShootingKind::BwdHomotopy),
        Direction::Forward => (ShootingKind::FwdSicvnTime, ShootingKind::FwdHomotopy),
    };
    let guess = GuessOptions {
        remedy: options.remedy,
        ..Default::default()
    };
    let seed = shooting::solve_with_restarts(
        problem,
        seed_kind,
        &Stage::Time,
        guess,
        &options.config,
        rng,
        options.seed_attempts,
    )?;
    let rec = match (seed.succeeded(), seed.reconstruction) {
        (true, Some(rec)) => rec,
        _ => {
            return Err(HomotopyError::Seed(format!(
                "{seed_kind} ended as {:?} after {} attempts",
                seed.outcome, options.seed_attempts
            )))
        }
    };
    let p0 = rec.p0;
    let mut z = match direction {
        Direction::Backward => seed.z.relabel(kind)?,
        Direction::Forward => {
            let v = &seed.z.values;
            ShootingVector::new(kind, vec![v[0], v[1], v[2], rec.p_m0, v[3]], seed.z.remedy)?
        }
    };
    log::info!(
        "seed {seed_kind}: t_f = {:.4} s, p0 = {p0:.6}",
        problem.seconds(seed.t_f)
    );

    let mut trace = HomotopyTrace {
        direction,
        p0,
        seed: seed.record(problem),
        stages: Vec::new(),
        final_solution: None,
    };
    let mut stages = Vec::new();
    let mut pending: Vec<StageParams> = options.schedule.targets().into_iter().rev().collect();
    let mut good: Option<StageParams> = None;
    let mut failures = 0usize;
    while let Some(&target) = pending.last() {
        let sol = shooting::solve(problem, &z, &target.stage(p0), &options.config)?;
        trace.stages.push(stage_record(problem, target, &sol, failures));
        if sol.succeeded() {
            log::info!(
                "kappa = {}, delta = {:e}: t_f = {:.4} s",
                target.kappa,
                target.delta,
                problem.seconds(sol.t_f)
            );
            pending.pop();
            good = Some(target);
            failures = 0;
            z = sol.z.clone();
            stages.push(sol);
            continue;
        }
        // the first κ = 1 stage has no predecessor in the schedule
        let last_good = good.unwrap_or(StageParams {
            kappa: 1.0,
            delta: target.delta,
        });
        let retry = if last_good == target {
            Err(BudgetExhausted {
                budget: options.schedule.max_backtracks,
            })
        } else {
            backtrack(last_good, target, &mut failures, options.schedule.max_backtracks)
        };
        match retry {
            Ok(mid) => {
                log::info!(
                    "stage kappa = {}, delta = {:e} failed; backtracking to kappa = {}, delta = {:e}",
                    target.kappa,
                    target.delta,
                    mid.kappa,
                    mid.delta
                );
                pending.push(mid);
            }
            Err(source) => {
                return Err(HomotopyError::Stage {
                    kappa: target.kappa,
                    delta: target.delta,
                    source,
                    trace: Box::new(trace),
                })
            }
        }
    }
    let last = stages.last().expect("schedule is non-empty");
    trace.final_solution = Some(last.record(problem));
    Ok(HomotopyRun {
        trace,
        seed,
        stages,
    })
}

/// Direct fuel-optimal solve with the forward ICVN formulation: random
/// guesses at the first `δ`, then warm-started steps through the remaining
/// `δ` values. Returns every converged stage.
pub fn solve_direct_fuel<R: Rng + ?Sized>(
    problem: &LandingProblem,
    delta_sequence: &[f64],
    config: &ShootingConfig,
    remedy: bool,
    rng: &mut R,
    attempts: usize,
) -> Result<Vec<ShootingSolution>, HomotopyError> {
    let (&first, rest) = delta_sequence
        .split_first()
        .ok_or(ScheduleError::Empty("delta"))?;
    let guess = GuessOptions {
        remedy,
        ..Default::default()
    };
    let start = shooting::solve_with_restarts(
        problem,
        ShootingKind::FwdIcvnFuel,
        &Stage::Fuel { delta: first },
        guess,
        config,
        rng,
        attempts,
    )?;
    if !start.succeeded() {
        return Err(HomotopyError::Direct(format!(
            "direct fuel solve at delta = {first} ended as {:?}",
            start.outcome
        )));
    }
    let mut out = vec![start];
    for &delta in rest {
        let z = out.last().expect("non-empty").z.clone();
        let sol = shooting::solve(problem, &z, &Stage::Fuel { delta }, config)?;
        if !sol.succeeded() {
            return Err(HomotopyError::Direct(format!(
                "direct fuel solve at delta = {delta} ended as {:?}",
                sol.outcome
            )));
        }
        out.push(sol);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = HomotopySchedule::default();
        s.validate().unwrap();
        assert_eq!(*s.kappa_sequence.last().unwrap(), 2f64.powi(-4));
        assert_eq!(s.delta_sequence[0], 0.1);
        assert!((s.delta_sequence.last().unwrap() - 1e-9).abs() < 1e-24);
        let t = s.targets();
        assert_eq!(t.len(), 5 + 8);
        assert!(t[..5].iter().all(|p| p.delta == 0.1));
        assert!(t[5..].iter().all(|p| p.kappa == 0.0625));
    }

    #[test]
    fn invalid_schedules() {
        let mut s = HomotopySchedule::default();
        s.kappa_sequence = vec![1.0, 0.5, 0.5];
        assert!(s.validate().is_err());
        s.kappa_sequence = vec![0.5, 0.25];
        assert_eq!(s.validate(), Err(ScheduleError::KappaStart(0.5)));
        s.kappa_sequence = vec![1.0];
        s.delta_sequence = vec![];
        assert_eq!(s.validate(), Err(ScheduleError::Empty("delta")));
    }

    #[test]
    fn geometric_backtracking() {
        let mut used = 0;
        let k = backtrack(
            StageParams { kappa: 0.25, delta: 0.1 },
            StageParams { kappa: 0.125, delta: 0.1 },
            &mut used,
            5,
        )
        .unwrap();
        assert!((k.kappa - 0.17677669529663688).abs() < 1e-15);
        assert_eq!(k.delta, 0.1);
        let d = backtrack(
            StageParams { kappa: 0.0625, delta: 1e-3 },
            StageParams { kappa: 0.0625, delta: 1e-4 },
            &mut used,
            5,
        )
        .unwrap();
        assert!((d.delta - 3.1622776601683794e-4).abs() < 1e-18);
        assert_eq!(used, 2);
    }

    #[test]
    fn fifth_failure_exhausts_budget() {
        let good = StageParams { kappa: 1.0, delta: 0.1 };
        let mut failed = StageParams { kappa: 0.5, delta: 0.1 };
        let mut used = 0;
        for _ in 0..4 {
            failed = backtrack(good, failed, &mut used, 5).unwrap();
        }
        assert_eq!(backtrack(good, failed, &mut used, 5), Err(BudgetExhausted { budget: 5 }));
    }
}
