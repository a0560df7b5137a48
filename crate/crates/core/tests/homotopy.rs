use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softland::dynamics::Direction;
use softland::homotopy::{self, HomotopyOptions, HomotopySchedule};
use softland::scaling::PhysicalConstants;
use softland::shooting::{InitialCondition, LandingProblem, ShootingConfig, ShootingSolution, Stage};

fn reference() -> LandingProblem {
    LandingProblem::new(&PhysicalConstants::default(), InitialCondition::reference()).unwrap()
}

fn fuel(p: &LandingProblem, s: &ShootingSolution) -> f64 {
    p.kilograms(1.0 - s.final_mass().unwrap())
}

#[test]
fn backward_homotopy_reference_case() {
    let p = reference();
    let run = homotopy::solve_foslp(
        &p,
        Direction::Backward,
        &HomotopyOptions::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let last = run.final_solution();
    assert!(last.succeeded());
    assert!((p.seconds(last.t_f) - 671.6373).abs() < 0.01);
    assert!((fuel(&p, last) - 142.904833).abs() < 1e-3);
    let traj = last.trajectory.as_ref().unwrap();
    assert_eq!(traj.switch_count, 1);
    assert!(traj.controls[0].u < 0.01);
    assert!(traj.controls.last().unwrap().u > 0.99);

    // p0 is frozen at the seed value for every stage
    let trace = &run.trace;
    assert!(trace.p0 > 0.0);
    for s in &run.stages {
        match s.stage {
            Stage::Homotopy { p0, .. } => assert_eq!(p0, trace.p0),
            ref other => panic!("unexpected stage {other}"),
        }
    }
    let schedule = HomotopySchedule::default();
    let done: Vec<_> = trace.converged_stages().collect();
    assert_eq!(done.len(), schedule.targets().len());
    let last_rec = done.last().unwrap();
    assert_eq!(last_rec.kappa, *schedule.kappa_sequence.last().unwrap());
    assert_eq!(last_rec.delta, *schedule.delta_sequence.last().unwrap());

    // flight time lengthens as the time weight is removed
    let kappa_path: Vec<f64> = done
        .iter()
        .filter(|s| s.delta == schedule.delta_sequence[0])
        .map(|s| s.t_f_s)
        .collect();
    assert_eq!(kappa_path.len(), schedule.kappa_sequence.len());
    assert!(kappa_path.windows(2).all(|w| w[1] > w[0]), "{kappa_path:?}");
    // smoothing makes even the pure time-weighted stage slower than the seed
    assert!(kappa_path[0] > p.seconds(run.seed.t_f));
}

#[test]
fn forward_homotopy_reaches_the_same_solution() {
    let p = reference();
    let run = homotopy::solve_foslp(
        &p,
        Direction::Forward,
        &HomotopyOptions::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let last = run.final_solution();
    assert!(last.succeeded());
    assert!((p.seconds(last.t_f) - 671.6134).abs() < 0.05);
    assert!((fuel(&p, last) - 142.905306).abs() < 1e-3);
}

#[test]
fn direct_fuel_solve_lies_below_homotopy_fuel() {
    let p = reference();
    let schedule = HomotopySchedule::default();
    let stages = homotopy::solve_direct_fuel(
        &p,
        &schedule.delta_sequence,
        &ShootingConfig::default(),
        true,
        &mut ChaCha8Rng::seed_from_u64(2),
        50,
    )
    .unwrap();
    assert_eq!(stages.len(), schedule.delta_sequence.len());
    let last = stages.last().unwrap();
    assert!(last.succeeded());
    let m = fuel(&p, last);
    assert!((m - 142.90006).abs() < 1e-3, "fuel = {m}");
    assert!((p.seconds(last.t_f) - 672.133).abs() < 0.05);
    // fuel drops monotonically as the smoothing is removed
    let masses: Vec<f64> = stages.iter().map(|s| fuel(&p, s)).collect();
    assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{masses:?}");
}
