use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use softland::dynamics::Direction;
use softland::homotopy::{self, HomotopyOptions, HomotopyTrace};
use softland::integrator::Trajectory;
use softland::montecarlo::{self, BatchOptions, BatchStats, DomainA};
use softland::scaling::UnitRole;
use softland::shooting::{
    self, GuessOptions, LandingProblem, ShootingConfig, ShootingSolution, SolutionRecord, Stage,
};

use crate::config::{Method, RunConfig};
use crate::CliError;

#[derive(Serialize)]
struct EstimateOut {
    t_f_hat_s: f64,
    t_max_s: f64,
    delta_v_mps: f64,
    delta_m_hat_kg: f64,
}

#[derive(Serialize)]
struct SolutionOut<'a> {
    config: &'a RunConfig,
    estimate: EstimateOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stages: Vec<SolutionRecord>,
    solution: Option<SolutionRecord>,
}

#[derive(Serialize)]
struct TraceOut<'a> {
    config: &'a RunConfig,
    estimate: EstimateOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    trace: Option<&'a HomotopyTrace>,
}

#[derive(Serialize)]
struct StatsOut<'a> {
    config: &'a RunConfig,
    stats: &'a BatchStats,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_trajectory(path: &Path, traj: &Trajectory, problem: &LandingProblem) -> Result<(), CliError> {
    let mut w = create(path)?;
    traj.write_csv(&mut w, &problem.scales)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_stage_trajectories(
    config: &RunConfig,
    problem: &LandingProblem,
    stages: &[ShootingSolution],
) -> Result<(), CliError> {
    if !config.stage_csvs {
        return Ok(());
    }
    let dir = config.out_dir.join("stages");
    for (i, s) in stages.iter().enumerate() {
        if let Some(traj) = &s.trajectory {
            write_trajectory(&dir.join(format!("stage_{i:02}.csv")), traj, problem)?;
        }
    }
    Ok(())
}

fn problem(config: &RunConfig) -> Result<(LandingProblem, EstimateOut), CliError> {
    let problem = LandingProblem::new(&config.constants, config.initial_condition)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let est = problem
        .estimate()
        .map_err(|e| CliError::Solver(format!("flight-time estimate: {e}")))?;
    let out = EstimateOut {
        t_f_hat_s: problem.seconds(est.t_f_hat),
        t_max_s: problem.seconds(est.t_max),
        delta_v_mps: problem.scales.dimensionalize(est.delta_v, UnitRole::Speed),
        delta_m_hat_kg: problem.kilograms(est.delta_m_hat),
    };
    Ok((problem, out))
}

fn summary(record: &SolutionRecord) -> String {
    let fuel = record
        .fuel_kg
        .map_or_else(|| "n/a".to_string(), |f| format!("{f:.4} kg"));
    format!(
        "{:?}: t_f = {:.4} s, fuel = {fuel}, {} iterations",
        record.outcome, record.t_f_s, record.iterations
    )
}

pub fn solve_time(config: &RunConfig) -> Result<(), CliError> {
    let (problem, estimate) = problem(config)?;
    let kind = config.method.time_kind().expect("checked when resolving");
    let guess = GuessOptions {
        remedy: config.remedy,
        tf_seed: config.tf_seed.into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let result = shooting::solve_with_restarts(
        &problem,
        kind,
        &Stage::Time,
        guess,
        &ShootingConfig::default(),
        &mut rng,
        config.attempts,
    );
    let path = config.out_dir.join("solution.json");
    let sol = match result {
        Ok(sol) => sol,
        Err(e) => {
            let out = SolutionOut {
                config,
                estimate,
                error: Some(e.to_string()),
                stages: Vec::new(),
                solution: None,
            };
            write_json(&path, &out)?;
            return Err(CliError::Solver(e.to_string()));
        }
    };
    let record = sol.record(&problem);
    let line = summary(&record);
    println!("{line}");
    write_json(
        &path,
        &SolutionOut {
            config,
            estimate,
            error: None,
            stages: Vec::new(),
            solution: Some(record),
        },
    )?;
    if let Some(traj) = &sol.trajectory {
        write_trajectory(&config.traj_csv, traj, &problem)?;
    }
    if sol.succeeded() {
        Ok(())
    } else {
        Err(CliError::Solver(line))
    }
}

pub fn solve_fuel(config: &RunConfig) -> Result<(), CliError> {
    let (problem, estimate) = problem(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shooting_config = ShootingConfig::default();
    let direction = match config.method {
        Method::HomotopyBackward => Direction::Backward,
        Method::HomotopyForward => Direction::Forward,
        Method::DirectIcvn => {
            return direct_fuel(config, &problem, estimate, &shooting_config, &mut rng);
        }
        _ => unreachable!("checked when resolving"),
    };
    let options = HomotopyOptions {
        schedule: config.schedule.clone(),
        config: shooting_config,
        remedy: config.remedy,
        seed_attempts: config.attempts,
    };
    let path = config.out_dir.join("trace.json");
    match homotopy::solve_foslp(&problem, direction, &options, &mut rng) {
        Ok(run) => {
            write_json(
                &path,
                &TraceOut {
                    config,
                    estimate,
                    error: None,
                    trace: Some(&run.trace),
                },
            )?;
            let last = run.final_solution();
            println!("{}", summary(&last.record(&problem)));
            if let Some(traj) = &last.trajectory {
                write_trajectory(&config.traj_csv, traj, &problem)?;
            }
            write_stage_trajectories(config, &problem, &run.stages)
        }
        Err(e) => {
            write_json(
                &path,
                &TraceOut {
                    config,
                    estimate,
                    error: Some(e.to_string()),
                    trace: e.trace(),
                },
            )?;
            Err(CliError::Solver(e.to_string()))
        }
    }
}

fn direct_fuel(
    config: &RunConfig,
    problem: &LandingProblem,
    estimate: EstimateOut,
    shooting_config: &ShootingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), CliError> {
    let path = config.out_dir.join("solution.json");
    let result = homotopy::solve_direct_fuel(
        problem,
        &config.schedule.delta_sequence,
        shooting_config,
        config.remedy,
        rng,
        config.attempts,
    );
    match result {
        Ok(stages) => {
            let last = stages.last().expect("at least one stage converged");
            let record = last.record(problem);
            println!("{}", summary(&record));
            write_json(
                &path,
                &SolutionOut {
                    config,
                    estimate,
                    error: None,
                    stages: stages.iter().map(|s| s.record(problem)).collect(),
                    solution: Some(record),
                },
            )?;
            if let Some(traj) = &last.trajectory {
                write_trajectory(&config.traj_csv, traj, problem)?;
            }
            write_stage_trajectories(config, problem, &stages)
        }
        Err(e) => {
            write_json(
                &path,
                &SolutionOut {
                    config,
                    estimate,
                    error: Some(e.to_string()),
                    stages: Vec::new(),
                    solution: None,
                },
            )?;
            Err(CliError::Solver(e.to_string()))
        }
    }
}

pub fn batch(config: &RunConfig) -> Result<(), CliError> {
    let kind = config.method.time_kind().expect("checked when resolving");
    let cases = montecarlo::sample_domain(&DomainA::default(), config.n, config.seed);
    let mut options = BatchOptions::new(
        kind,
        GuessOptions {
            remedy: config.remedy,
            tf_seed: config.tf_seed.into(),
        },
    );
    options.attempts = config.attempts;
    let result = montecarlo::run_batch(&config.constants, &cases, &options, config.seed);
    let s = &result.stats;
    println!(
        "{} cases: {} landed ({:.1}%), {} negative t_f, {} subsurface, {} not converged; mean {:.2} iterations",
        s.n_total,
        s.n_success,
        100.0 * s.success_rate,
        s.n_negative_tf,
        s.n_subsurface,
        s.n_not_converged,
        s.mean_iterations
    );
    write_json(&config.out_dir.join("stats.json"), &StatsOut { config, stats: s })?;
    let path = config.out_dir.join("cases.csv");
    let mut w = create(&path)?;
    montecarlo::write_cases_csv(&mut w, &result.records)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    write_json(&config.out_dir.join("timing.json"), &result.timing)
}
