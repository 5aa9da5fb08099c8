//! Acceptance suite: evaluates the twelve acceptance criteria at their
//! stated tolerances and runtime limits, printing one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_RED` are measured and reported like the rest
//! but do not fail the target; the analysis of why they cannot be met is
//! kept with the project notes. A known-red criterion that starts passing
//! fails the target so the list cannot go stale.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strange_reservoir::diagnostics::{self, Eigenvalue};
use strange_reservoir::dynsys::{self, Direction, DynamicalSystem, ObservationFn, PhasePoint};
use strange_reservoir::experiments::{self, attractor_samples, ExperimentConfig};
use strange_reservoir::readout::{self, MlpModel};
use strange_reservoir::reservoir::{self, ReservoirSystem};
use strange_reservoir::{DenseMatrix, DenseVector};

const KNOWN_RED: &[usize] = &[8, 10];
const SEEDS: u64 = 20;
const SEEDS_REQUIRED: usize = 18;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Post-washout Lorenz orbit of the reconstruction configuration.
fn lorenz_attractor() -> (DynamicalSystem, Vec<PhasePoint>, Vec<f64>, usize) {
    let cfg = ExperimentConfig::lorenz();
    let sys = DynamicalSystem::new(cfg.system, cfg.dt).unwrap();
    let p0 = PhasePoint::new(cfg.initial_condition.clone());
    let orbit = dynsys::orbit(&sys, &p0, cfg.total_steps(), Direction::Forward).unwrap();
    let inputs: Vec<f64> = orbit[..cfg.total_steps()].iter().map(|p| p[0]).collect();
    (sys, orbit, inputs, cfg.washout_steps())
}

fn random_points(orbit: &[PhasePoint], washout: usize, count: usize, seed: u64) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| orbit[rng.random_range(washout..orbit.len())].clone())
        .collect()
}

fn sup_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn criterion_1() -> Outcome {
    let r = diagnostics::monte_carlo_reachability(7, 200, 1, 1e-10).unwrap();
    outcome(r.passed && r.samples == 200, format!("{}", r))
}

fn criterion_2() -> Outcome {
    let eigs = [Eigenvalue::real(0.3), Eigenvalue::real(-0.2), Eigenvalue::real(0.5)];
    let r = diagnostics::monte_carlo_periodic_independence(7, &eigs, 2, 200, 2, 1e-10).unwrap();
    outcome(r.passed && r.samples == 200, format!("{}", r))
}

fn criterion_3() -> Outcome {
    let (sys, orbit, _, washout) = lorenz_attractor();
    let res = reservoir::build_takens(1).unwrap();
    let omega = ObservationFn::Coordinate(0);
    let mut worst = 0.0f64;
    for m in random_points(&orbit, washout, 100, 3) {
        let f = reservoir::gs_series(&res, &sys, &omega, &m, res.dim()).unwrap();
        let back = dynsys::orbit(&sys, &m, 2, Direction::Backward).unwrap();
        for (j, p) in back.iter().enumerate() {
            worst = worst.max((f[j] - p[0]).abs());
        }
    }
    outcome(worst == 0.0, format!("max |GS - delay vector| = {worst:e} over 100 points"))
}

fn criterion_4() -> Outcome {
    let (sys, orbit, inputs, washout) = lorenz_attractor();
    let res = reservoir::build_uniform(7, 0).unwrap();
    let omega = ObservationFn::Coordinate(0);
    let sup = sup_abs(&inputs);
    let depth = reservoir::effective_truncation(&res, sup, 1e-10).unwrap();
    let bound = res.tail_bound(depth, sup);
    let mut worst = 0.0f64;
    for m in random_points(&orbit, washout, 100, 4) {
        let f = reservoir::gs_series(&res, &sys, &omega, &m, depth).unwrap();
        let prev = sys.flow_step(&m, Direction::Backward).unwrap();
        let f_prev = reservoir::gs_series(&res, &sys, &omega, &prev, depth).unwrap();
        let residual = f.sub(&res.a().matvec(&f_prev).unwrap()).sub(&res.c().scaled(m[0])).norm();
        worst = worst.max(residual);
    }
    outcome(
        worst < 10.0 * bound,
        format!("max residual {worst:e} < 10 x tail bound {bound:e} (depth {depth})"),
    )
}

fn criterion_5() -> Outcome {
    let (_, _, inputs, _) = lorenz_attractor();
    let res = reservoir::build_haar(20, 0.9, 5).unwrap();
    let r = diagnostics::check_esp(&res, &inputs[..1000], 2, 5).unwrap();
    let contracted = r.statistic < 1e-18;

    let slow = reservoir::build_haar(20, 0.999, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut start = || DenseVector::new((0..20).map(|_| rng.random_range(-1.0..=1.0)).collect());
    let (x0, x1) = (start(), start());
    let a = reservoir::drive(&slow, &inputs[..100], Some(&x0), 0).unwrap();
    let b = reservoir::drive(&slow, &inputs[..100], Some(&x1), 0).unwrap();
    let gap = a.states[99].sub(&b.states[99]).norm();
    let initial = x0.sub(&x1).norm();
    outcome(
        contracted && gap > 0.5 * initial,
        format!(
            "rho 0.9, 1000 steps: gap {:e} (< 1e-18); rho 0.999, 100 steps: gap/initial = {:.4} (> 0.5)",
            r.statistic,
            gap / initial
        ),
    )
}

/// Relative Frobenius distance between the central-difference Jacobian
/// and its Richardson extrapolation from the halved step.
fn richardson_error(j_h: &DenseMatrix, j_half: &DenseMatrix) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in j_h.as_slice().iter().zip(j_half.as_slice()) {
        let extrapolated = (4.0 * b - a) / 3.0;
        diff += (a - extrapolated) * (a - extrapolated);
        norm += extrapolated * extrapolated;
    }
    (diff / norm).sqrt()
}

const JACOBIAN_FD_EPS: f64 = 1e-4;

fn criterion_6() -> Outcome {
    let (sys, orbit, inputs, washout) = lorenz_attractor();
    let res = reservoir::build_uniform(7, 0).unwrap();
    let omega = ObservationFn::Coordinate(0);
    let depth = reservoir::effective_truncation(&res, sup_abs(&inputs), 1e-10).unwrap();
    let mut worst = 0.0f64;
    for m in random_points(&orbit, washout, 20, 6) {
        let j_h = reservoir::gs_jacobian(&res, &sys, &omega, &m, depth, JACOBIAN_FD_EPS).unwrap();
        let j_half = reservoir::gs_jacobian(&res, &sys, &omega, &m, depth, JACOBIAN_FD_EPS / 2.0).unwrap();
        worst = worst.max(richardson_error(&j_h, &j_half));
    }
    outcome(worst < 1e-4, format!("max relative error {worst:e} at 20 points (step {JACOBIAN_FD_EPS:e})"))
}

fn seeds_line(passes: usize, extra: String) -> Outcome {
    outcome(
        passes >= SEEDS_REQUIRED,
        format!("{passes}/{SEEDS} seeds pass (need {SEEDS_REQUIRED}){extra}"),
    )
}

fn lorenz_reservoir_check(
    check: impl Fn(&ReservoirSystem, &DynamicalSystem, &[PhasePoint], usize) -> Option<bool>,
    samples: usize,
) -> (usize, Vec<u64>) {
    let (sys, orbit, inputs, washout) = lorenz_attractor();
    let pts = attractor_samples(&orbit, washout, samples);
    let d = ExperimentConfig::lorenz().diagnostics;
    let mut passes = 0;
    let mut failed = Vec::new();
    for seed in 0..SEEDS {
        let res = reservoir::build_uniform(7, seed).unwrap();
        let depth = reservoir::effective_truncation(&res, sup_abs(&inputs), d.truncation_tol).unwrap();
        if check(&res, &sys, &pts, depth) == Some(true) {
            passes += 1;
        } else {
            failed.push(seed);
        }
    }
    (passes, failed)
}

fn criterion_7() -> Outcome {
    let d = ExperimentConfig::lorenz().diagnostics;
    let omega = ObservationFn::Coordinate(0);
    let (passes, failed) = lorenz_reservoir_check(
        |res, sys, pts, depth| {
            diagnostics::check_immersion_rank(res, sys, &omega, pts, depth, d.fd_eps, d.rank_tol)
                .ok()
                .map(|r| r.passed)
        },
        50,
    );
    seeds_line(passes, format!("; failing seeds {failed:?}"))
}

fn criterion_8() -> Outcome {
    let omega = ObservationFn::Coordinate(0);
    let (passes, failed) = lorenz_reservoir_check(
        |res, sys, pts, depth| {
            diagnostics::check_injectivity(res, sys, &omega, pts, depth, 1e-3, 0.05)
                .ok()
                .map(|r| r.passed)
        },
        2000,
    );
    seeds_line(passes, format!("; failing seeds {failed:?}"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mut rossler_ok, mut lorenz_ok) = (0, 0);
    let (mut min_ev, mut min_lobes) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..SEEDS {
        for mut cfg in [ExperimentConfig::rossler(), ExperimentConfig::lorenz()] {
            cfg.seed = seed;
            cfg.output.dir = dir.path().to_path_buf();
            let r = experiments::run_reconstruct(&cfg).unwrap();
            let ev = r.metric("explained_ratio").unwrap();
            min_ev = min_ev.min(ev);
            match r.metric("two_lobe_ratio") {
                Some(lobes) => {
                    min_lobes = min_lobes.min(lobes);
                    lorenz_ok += usize::from(ev > 0.95 && lobes > 2.0);
                }
                None => rossler_ok += usize::from(ev > 0.95),
            }
        }
    }
    outcome(
        rossler_ok >= SEEDS_REQUIRED && lorenz_ok >= SEEDS_REQUIRED,
        format!(
            "Rössler {rossler_ok}/{SEEDS}, Lorenz {lorenz_ok}/{SEEDS} (need {SEEDS_REQUIRED}); min explained {min_ev:.6}, min lobe ratio {min_lobes:.3}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::forecast();
    cfg.output.dir = dir.path().to_path_buf();
    let r = experiments::run_forecast(&cfg).unwrap();
    let m = |k: &str| r.metric(k).unwrap();
    outcome(
        r.passed(),
        format!(
            "NRMSE {:.4} (< 0.05), {:.2}x persistence (>= 5), filter MSE {:.4} (< 0.05, noise floor {:.4})",
            m("ridge_nrmse"),
            m("ridge_persistence_ratio"),
            m("ridge_filter_mse"),
            m("identity_filter_mse")
        ),
    )
}

fn criterion_11() -> Outcome {
    let desk = experiments::MlpSpec::desk();
    let mut sizes = vec![20];
    sizes.extend_from_slice(&desk.hidden_layers);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = MlpModel::new(&sizes, -20.0, 20.0, &mut rng).unwrap();
    let inputs: Vec<DenseVector> = (0..5)
        .map(|_| DenseVector::new((0..20).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let targets: Vec<f64> = (0..5).map(|_| rng.random_range(-15.0..15.0)).collect();
    let errors = readout::gradient_check(&model, &inputs, &targets, 1e-5, 1e-7);
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst < 1e-5 && errors.len() == sizes.len() - 1,
        format!(
            "net {sizes:?}, per-layer max relative error [{}]",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Vec::new();
    for kind in common::ALL_KINDS {
        for seed in 0..100 {
            if !common::round_trip_identical(&common::random_artifact(kind, seed), dir.path()) {
                bad.push((kind, seed));
            }
        }
    }
    outcome(bad.is_empty(), format!("400 artifacts, mismatches {bad:?}"))
}

type Criterion = (&'static str, fn() -> Outcome, f64);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("Krylov reachability Monte Carlo", criterion_1, 1.0),
        ("periodic independence Monte Carlo", criterion_2, 2.0),
        ("Takens equivalence", criterion_3, 5.0),
        ("GS fixed-point identity", criterion_4, 10.0),
        ("ESP contraction", criterion_5, 1.0),
        ("Jacobian consistency", criterion_6, 20.0),
        ("immersion rank", criterion_7, 60.0),
        ("injectivity surrogate", criterion_8, 60.0),
        ("reconstruction pipelines", criterion_9, 60.0),
        ("forecast and filter desk run", criterion_10, 60.0),
        ("MLP gradient check", criterion_11, 5.0),
        ("persistence round trip", criterion_12, 5.0),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let id = i + 1;
        let started = Instant::now();
        let o = run();
        let secs = started.elapsed().as_secs_f64();
        let ok = o.passed && secs < *limit;
        let known_red = KNOWN_RED.contains(&id);
        println!(
            "criterion {id:2} {} {name}: {} [{secs:.2} s, limit {limit} s]{}",
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            if known_red { " (known red)" } else { "" }
        );
        passed += usize::from(ok);
        if ok == known_red {
            unexpected.push(id);
        }
    }
    println!("{passed}/12 criteria pass; known red: {KNOWN_RED:?}");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
