//! Batch experiments over randomly drawn initial conditions.

use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rootfind::SolveStatus;
use crate::scaling::PhysicalConstants;
use crate::shooting::{
    self, GuessOptions, InitialCondition, LandingProblem, Outcome, ShootingConfig, ShootingKind,
    Stage,
};

/// Box of initial conditions, dimensional, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainA {
    pub r0_km: (f64, f64),
    pub v0_mps: (f64, f64),
    pub omega0_radps: (f64, f64),
    pub m0_kg: (f64, f64),
}

impl Default for DomainA {
    fn default() -> Self {
        Self {
            r0_km: (1738.0, 1911.9738),
            v0_mps: (-83.9779, 83.9779),
            omega0_radps: (0.0, 9.6638e-4),
            m0_kg: (240.0, 600.0),
        }
    }
}

impl DomainA {
    pub fn contains(&self, ic: &InitialCondition) -> bool {
        let within = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        within(ic.r0_km, self.r0_km)
            && within(ic.v0_mps, self.v0_mps)
            && within(ic.omega0_radps, self.omega0_radps)
            && within(ic.m0_kg, self.m0_kg)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InitialCondition {
        let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        InitialCondition {
            r0_km: draw(self.r0_km),
            v0_mps: draw(self.v0_mps),
            omega0_radps: draw(self.omega0_radps),
            m0_kg: draw(self.m0_kg),
        }
    }
}

fn case_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
    rng.set_stream(stream);
    rng
}

/// `n` initial conditions; case `i` is drawn from the sub-stream `seed ^ i`.
pub fn sample_domain(domain: &DomainA, n: usize, seed: u64) -> Vec<InitialCondition> {
    (0..n)
        .map(|i| domain.sample(&mut case_rng(seed, i, 0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub kind: ShootingKind,
    pub stage: Stage,
    pub guess: GuessOptions,
    pub config: ShootingConfig,
    /// Random guesses tried per case before it is recorded as a failure.
    pub attempts: usize,
}

impl BatchOptions {
    pub fn new(kind: ShootingKind, guess: GuessOptions) -> Self {
        Self {
            kind,
            stage: Stage::Time,
            guess,
            config: ShootingConfig::default(),
            attempts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub index: usize,
    pub ic: InitialCondition,
    pub outcome: Outcome,
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub function_evaluations: usize,
    pub t_f_s: Option<f64>,
    pub fuel_kg: Option<f64>,
    pub p0: Option<f64>,
    /// Touchdown co-state `(p_r, p_v, p_ω)` of backward solutions.
    pub touchdown_costate: Option<[f64; 3]>,
    pub t_f_hat_s: Option<f64>,
    pub min_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Counts partition `n_total`; means are over successful landings only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub n_total: usize,
    pub n_success: usize,
    pub n_negative_tf: usize,
    pub n_subsurface: usize,
    pub n_not_converged: usize,
    pub success_rate: f64,
    pub mean_iterations: f64,
    pub mean_function_evaluations: f64,
}

impl BatchStats {
    pub fn from_records(records: &[CaseRecord]) -> Self {
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let succ: Vec<&CaseRecord> = records
            .iter()
            .filter(|r| r.outcome == Outcome::SuccessfulLanding)
            .collect();
        let mean = |f: &dyn Fn(&CaseRecord) -> usize| {
            if succ.is_empty() {
                0.0
            } else {
                succ.iter().map(|r| f(r) as f64).sum::<f64>() / succ.len() as f64
            }
        };
        let n_total = records.len();
        let n_success = succ.len();
        Self {
            n_total,
            n_success,
            n_negative_tf: count(Outcome::NegativeFinalTime),
            n_subsurface: count(Outcome::Subsurface),
            n_not_converged: count(Outcome::NotConverged),
            success_rate: if n_total == 0 {
                0.0
            } else {
                n_success as f64 / n_total as f64
            },
            mean_iterations: mean(&|r| r.iterations),
            mean_function_evaluations: mean(&|r| r.function_evaluations),
        }
    }
}

/// Wall-clock figures, kept apart from the reproducible statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub total_seconds: f64,
    pub mean_solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub stats: BatchStats,
    pub records: Vec<CaseRecord>,
    pub timing: BatchTiming,
}

/// Solves one case with guesses drawn from its own sub-stream.
pub fn run_case(
    consts: &PhysicalConstants,
    index: usize,
    ic: InitialCondition,
    options: &BatchOptions,
    seed: u64,
) -> CaseRecord {
    let mut record = CaseRecord {
        index,
        ic,
        outcome: Outcome::NotConverged,
        status: None,
        iterations: 0,
        function_evaluations: 0,
        t_f_s: None,
        fuel_kg: None,
        p0: None,
        touchdown_costate: None,
        t_f_hat_s: None,
        min_radius: None,
        note: None,
    };
    let problem = match LandingProblem::new(consts, ic) {
        Ok(p) => p,
        Err(e) => {
            record.note = Some(e.to_string());
            return record;
        }
    };
    record.t_f_hat_s = problem.estimate().ok().map(|e| problem.seconds(e.t_f_hat));
    let mut rng = case_rng(seed, index, 1);
    let solution = shooting::solve_with_restarts(
        &problem,
        options.kind,
        &options.stage,
        options.guess,
        &options.config,
        &mut rng,
        options.attempts,
    );
    let sol = match solution {
        Ok(s) => s,
        Err(e) => {
            record.note = Some(e.to_string());
            return record;
        }
    };
    record.outcome = sol.outcome;
    record.status = Some(sol.report.status);
    record.iterations = sol.report.iterations;
    record.function_evaluations = sol.report.function_evaluations;
    if sol.report.converged() {
        record.t_f_s = Some(problem.seconds(sol.t_f));
    }
    record.fuel_kg = sol.final_mass().map(|m| problem.kilograms(1.0 - m));
    record.p0 = sol.reconstruction.map(|r| r.p0);
    record.min_radius = sol.min_radius;
    if options.kind.direction() == crate::dynamics::Direction::Backward && sol.report.converged() {
        let v = &sol.z.values;
        record.touchdown_costate = Some([v[0], v[1], v[2]]);
    }
    record.note = sol.note.clone().or(sol.report.message.clone());
    record
}

/// Solves every case independently and in parallel; results do not depend
/// on scheduling.
pub fn run_batch(
    consts: &PhysicalConstants,
    cases: &[InitialCondition],
    options: &BatchOptions,
    seed: u64,
) -> BatchResult {
    let started = Instant::now();
    let timed: Vec<(CaseRecord, f64)> = cases
        .par_iter()
        .enumerate()
        .map(|(i, ic)| {
            let t = Instant::now();
            let r = run_case(consts, i, *ic, options, seed);
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    let stats_records: Vec<CaseRecord> = timed.iter().map(|(r, _)| r.clone()).collect();
    let stats = BatchStats::from_records(&stats_records);
    let succ_secs: Vec<f64> = timed
        .iter()
        .filter(|(r, _)| r.outcome == Outcome::SuccessfulLanding)
        .map(|(_, s)| *s)
        .collect();
    let timing = BatchTiming {
        total_seconds: started.elapsed().as_secs_f64(),
        mean_solve_seconds: if succ_secs.is_empty() {
            0.0
        } else {
            succ_secs.iter().sum::<f64>() / succ_secs.len() as f64
        },
    };
    BatchResult {
        stats,
        records: stats_records,
        timing,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9}")).unwrap_or_default()
}

/// Per-case CSV with one row per record.
pub fn write_cases_csv<W: Write>(mut w: W, records: &[CaseRecord]) -> io::Result<()> {
    writeln!(
        w,
        "index,r0_km,v0_mps,omega0_radps,m0_kg,outcome,iterations,function_evaluations,t_f_s,fuel_kg,p0"
    )?;
    for r in records {
        let outcome = serde_json::to_value(r.outcome)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{:.6},{:.6},{:.9e},{:.6},{},{},{},{},{},{}",
            r.index,
            r.ic.r0_km,
            r.ic.v0_mps,
            r.ic.omega0_radps,
            r.ic.m0_kg,
            outcome,
            r.iterations,
            r.function_evaluations,
            opt(r.t_f_s),
            opt(r.fuel_kg),
            opt(r.p0),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_reproducible_and_bounded() {
        let d = DomainA::default();
        assert_eq!(sample_domain(&d, 1, 42), sample_domain(&d, 1, 42));
        let cases = sample_domain(&d, 10_000, 7);
        assert!(cases.iter().all(|c| d.contains(c)));
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let width = |(lo, hi): (f64, f64)| hi - lo;
        let n = cases.len() as f64;
        let fields: [(fn(&InitialCondition) -> f64, (f64, f64)); 4] = [
            (|c| c.r0_km, d.r0_km),
            (|c| c.v0_mps, d.v0_mps),
            (|c| c.omega0_radps, d.omega0_radps),
            (|c| c.m0_kg, d.m0_kg),
        ];
        for (get, b) in fields {
            let mean = cases.iter().map(get).sum::<f64>() / n;
            // 2% of the interval width; the v0 midpoint is zero
            assert!((mean - mid(b)).abs() <= 0.02 * width(b), "{mean} vs {}", mid(b));
        }
    }

    #[test]
    fn case_streams_differ() {
        let d = DomainA::default();
        let cases = sample_domain(&d, 3, 5);
        assert_ne!(cases[0], cases[1]);
        assert_ne!(cases[1], cases[2]);
    }

    fn rec(outcome: Outcome, iterations: usize) -> CaseRecord {
        CaseRecord {
            index: 0,
            ic: InitialCondition::reference(),
            outcome,
            status: None,
            iterations,
            function_evaluations: 2 * iterations,
            t_f_s: None,
            fuel_kg: None,
            p0: None,
            touchdown_costate: None,
            t_f_hat_s: None,
            min_radius: None,
            note: None,
        }
    }

    #[test]
    fn stats_partition_and_success_means() {
        let records = vec![
            rec(Outcome::SuccessfulLanding, 10),
            rec(Outcome::SuccessfulLanding, 20),
            rec(Outcome::Subsurface, 99),
            rec(Outcome::NegativeFinalTime, 99),
            rec(Outcome::NotConverged, 300),
        ];
        let s = BatchStats::from_records(&records);
        assert_eq!(
            s.n_success + s.n_negative_tf + s.n_subsurface + s.n_not_converged,
            s.n_total
        );
        assert_eq!(s.mean_iterations, 15.0);
        assert_eq!(s.mean_function_evaluations, 30.0);
        assert!((s.success_rate - 0.4).abs() < 1e-15);
    }

    #[test]
    fn csv_has_one_row_per_case() {
        let mut buf = Vec::new();
        write_cases_csv(&mut buf, &[rec(Outcome::Subsurface, 3)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains(",subsurface,3,6,"));
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}
