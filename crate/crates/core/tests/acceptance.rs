//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pseudotransient::cli::execute;
use pseudotransient::dae::{DaeProblem, Dims, FnModel, ModelKind, SystemState};
use pseudotransient::hybrid::{run, Method, RunPlan, RunResult, RunStatus, Verdict};
use pseudotransient::models::{
    build_hybrid, scenario_qss_difficulty, scenario_stable, scenario_unstable, Scenario,
};
use pseudotransient::numeric::{fd_jacobian, Matrix};
use pseudotransient::ptc::{backward_euler_first_newton, ptc_step, ser_update};
use pseudotransient::trapezoidal::{trap_integrate, trap_matrix, trap_residual, NoStepEvents, TrapConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDENTITY_RTOL: f64 = 1e-12;
const SER_CASES: usize = 10_000;
const A_MATRIX_RTOL: f64 = 1e-5;
const A_MATRIX_STATES: usize = 50;
const EQUILIBRIUM_ATOL: f64 = 1e-4;
const TRAJECTORY_RTOL: f64 = 0.02;
const SOLVE_RATIO: f64 = 0.5;
const QSS_MATCH_ATOL: f64 = 1e-3;
const CONSISTENCY_TOL: f64 = 1e-6;
const ORDER_RATIO: (f64, f64) = (3.5, 4.5);
/// A completed baseline run counts as at rest below this residual norm.
const REST_TOL: f64 = 1e-6;

const FAST_BUDGET: Duration = Duration::from_secs(1);
const A_MATRIX_BUDGET: Duration = Duration::from_secs(10);
const SCENARIO_BUDGET: Duration = Duration::from_secs(60);

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn report(&mut self, n: usize, title: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {tag}: {title}: {detail}");
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ode_state(v: Vec<f64>) -> SystemState {
    SystemState::new(0.0, v, vec![], vec![], vec![])
}

/// `dz/dt = M z + c` with its exact Jacobian.
fn linear_ode(m: Vec<Vec<f64>>, c: Vec<f64>) -> DaeProblem {
    let n = c.len();
    let jm = m.clone();
    let model = FnModel::new(Dims::new(n, 0, 0, 0), move |_, p, hc, _, _| {
        for i in 0..n {
            hc[i] = c[i] + (0..n).map(|j| m[i][j] * p[j]).sum::<f64>();
        }
    })
    .with_jacobian(move |_, _| {
        let rows: Vec<&[f64]> = jm.iter().map(|r| r.as_slice()).collect();
        Matrix::from_rows(&rows)
    });
    DaeProblem::new(Arc::new(model), ModelKind::LongTerm)
}

/// `dz/dt = M z + a ⊙ sin(z) + b ⊙ z³` with its exact Jacobian.
fn nonlinear_ode(m: Vec<Vec<f64>>, a: Vec<f64>, b: Vec<f64>) -> DaeProblem {
    let n = a.len();
    let (jm, ja, jb) = (m.clone(), a.clone(), b.clone());
    let model = FnModel::new(Dims::new(n, 0, 0, 0), move |_, p, hc, _, _| {
        for i in 0..n {
            let lin: f64 = (0..n).map(|j| m[i][j] * p[j]).sum();
            hc[i] = lin + a[i] * p[i].sin() + b[i] * p[i].powi(3);
        }
    })
    .with_jacobian(move |_, p| {
        let mut rows = jm.clone();
        for i in 0..n {
            rows[i][i] += ja[i] * p[i].cos() + 3.0 * jb[i] * p[i] * p[i];
        }
        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        Matrix::from_rows(&rows)
    });
    DaeProblem::new(Arc::new(model), ModelKind::LongTerm)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = rng.gen_range(-1.0..1.0);
                    if i == j {
                        v - 2.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn criterion_1(v: &mut Verdicts) {
    let (worst, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for case in 0..200 {
            let n = rng.gen_range(1..=8);
            let m = random_matrix(&mut rng, n);
            let prob = if case % 2 == 0 {
                linear_ode(m, random_vec(&mut rng, n, -1.0, 1.0))
            } else {
                nonlinear_ode(m, random_vec(&mut rng, n, -1.0, 1.0), random_vec(&mut rng, n, -0.5, 0.5))
            };
            let s = ode_state(random_vec(&mut rng, n, -2.0, 2.0));
            let delta = 10f64.powf(rng.gen_range(-3.0..3.0));
            let (a, _) = ptc_step(&prob, &s, delta, &prob.assemble_mass()).expect("ptc step");
            let b = backward_euler_first_newton(&prob, &s, delta).expect("backward Euler");
            let scale = b.zc.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
            let diff = max_abs_diff(&a.zc, &b.zc) / scale;
            worst = worst.max(diff);
        }
        worst
    });
    v.report(
        1,
        "Ψtc step equals the first backward-Euler Newton iterate",
        worst <= IDENTITY_RTOL && elapsed < FAST_BUDGET,
        format!("200 systems, worst relative difference {worst:.2e} (tol {IDENTITY_RTOL:.0e}), {elapsed:.2?}"),
    );
}

fn criterion_2(v: &mut Verdicts) {
    let (bad, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bad = 0usize;
        for _ in 0..SER_CASES {
            let delta = 10f64.powf(rng.gen_range(-4.0..2.0));
            let f_prev = 10f64.powf(rng.gen_range(-8.0..2.0));
            let f_cur = 10f64.powf(rng.gen_range(-8.0..2.0));
            let delta_max = 10f64.powf(rng.gen_range(-2.0..6.0));
            let next = ser_update(delta, f_prev, f_cur, delta_max);
            let formula = (delta * f_prev / f_cur).min(delta_max);
            let capped = next <= delta_max;
            let matches = rel_diff(next, formula) <= 1e-15;
            // a falling residual never shrinks δ below the cap, a rising one never grows it
            let monotone = if f_cur < f_prev {
                next >= delta.min(delta_max)
            } else {
                next <= delta
            };
            if !(capped && matches && monotone) {
                bad += 1;
            }
        }
        bad
    });
    v.report(
        2,
        "SER ratio formula, cap and monotonicity",
        bad == 0 && elapsed < FAST_BUDGET,
        format!("{SER_CASES} random cases, {bad} violations, {elapsed:.2?}"),
    );
}

/// A state near `s`: every continuous entry moved by up to 2 % of its
/// magnitude (at least 0.01 in absolute terms).
fn perturbed(rng: &mut ChaCha8Rng, s: &SystemState) -> Vec<f64> {
    s.p()
        .iter()
        .map(|&x| x + rng.gen_range(-1.0..1.0) * (0.02 * x.abs()).max(0.01))
        .collect()
}

fn criterion_3(v: &mut Verdicts) {
    let (result, elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        let mut checked = 0usize;
        let h = TrapConfig::default().h;
        for sc in [scenario_stable(), scenario_qss_difficulty(), scenario_unstable()] {
            for kind in [ModelKind::LongTerm, ModelKind::Qss] {
                let sys = build_hybrid(&sc, kind).expect("bundled scenario builds");
                let prob = &sys.problem;
                for _ in 0..A_MATRIX_STATES {
                    let p_n = perturbed(&mut rng, &sys.initial);
                    let p = perturbed(&mut rng, &sys.initial);
                    let zd = &sys.initial.zd;
                    let f_n = prob.residual_at(zd, &p_n).expect("residual");
                    let jac = prob.jacobian_at(zd, &p).expect("jacobian");
                    let a = trap_matrix(prob, &jac, h);
                    let fd = fd_jacobian(|q| trap_residual(prob, zd, q, &p_n, &f_n, h), &p, 1e-6).expect("fd");
                    for i in 0..a.rows() {
                        for j in 0..a.cols() {
                            let e = (a[(i, j)] - fd[(i, j)]).abs() / a[(i, j)].abs().max(1.0);
                            worst = worst.max(e);
                        }
                    }
                    checked += 1;
                }
            }
        }
        (worst, checked)
    });
    let (worst, checked) = result;
    v.report(
        3,
        "analytic trapezoidal iteration matrix matches finite differences",
        worst <= A_MATRIX_RTOL && elapsed < A_MATRIX_BUDGET,
        format!("{checked} states over 3 scenarios x 2 forms, worst relative error {worst:.2e} (tol {A_MATRIX_RTOL:.0e}), {elapsed:.2?}"),
    );
}

fn plan_for(sc: &Scenario, kind: ModelKind, method: Method) -> RunPlan {
    let mut plan = RunPlan::new(kind, method, sc.horizon.t_end);
    plan.t0 = sc.horizon.t0;
    plan.t1 = sc.horizon.t1;
    plan
}

fn run_scenario(sc: &Scenario, kind: ModelKind, method: Method) -> RunResult {
    let sys = build_hybrid(sc, kind).expect("bundled scenario builds");
    run(&sys, &plan_for(sc, kind, method))
}

/// State of `r` at time `t`: the last trajectory entry with `t' <= t`.
fn state_at(r: &RunResult, t: f64) -> &SystemState {
    r.trajectory
        .iter()
        .take_while(|s| s.t <= t + 1e-9)
        .last()
        .expect("trajectory starts at t = 0")
}

/// Pairs the k-th jump of each run (same device) and returns the worst
/// z_c deviation at those events, normalized by `max(|baseline|, 1)`.
fn event_deviation(ptc: &RunResult, base: &RunResult) -> Option<f64> {
    let a: Vec<_> = ptc.jumps().collect();
    let b: Vec<_> = base.jumps().collect();
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.device != y.device) {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let sa = state_at(ptc, x.t);
        let sb = state_at(base, y.t);
        for (u, w) in sa.zc.iter().zip(sb.zc.iter()) {
            worst = worst.max((u - w).abs() / w.abs().max(1.0));
        }
    }
    Some(worst)
}

struct Runs {
    stable_ptc: RunResult,
    qss_fallback: RunResult,
    unstable_ptc: RunResult,
}

fn criterion_4(v: &mut Verdicts) -> RunResult {
    let sc = scenario_stable();
    let ((ptc, base), elapsed) = timed(|| {
        (
            run_scenario(&sc, ModelKind::LongTerm, Method::Ptc),
            run_scenario(&sc, ModelKind::LongTerm, Method::Trapezoidal),
        )
    });
    let converged = ptc.status == RunStatus::Converged;
    let at_rest = base.status == RunStatus::Completed && base.final_fnorm <= REST_TOL;
    let dist = max_abs_diff(&ptc.final_state.p(), &base.final_state.p());
    let same_zd = ptc.final_state.zd == base.final_state.zd;
    let events = event_deviation(&ptc, &base);
    let ratio = ptc.counters.linear_solves as f64 / base.counters.linear_solves as f64;
    let pass = converged
        && at_rest
        && same_zd
        && dist <= EQUILIBRIUM_ATOL
        && events.is_some_and(|e| e <= TRAJECTORY_RTOL)
        && ratio < SOLVE_RATIO
        && elapsed < SCENARIO_BUDGET;
    v.report(
        4,
        "stable scenario",
        pass,
        format!(
            "ptc {} / baseline {} (F = {:.1e}); equilibrium distance {dist:.2e} (tol {EQUILIBRIUM_ATOL:.0e}); \
             same z_d {same_zd}; z_c deviation at events {} (tol {TRAJECTORY_RTOL}); linear solves {} / {} = {ratio:.3} \
             (tol {SOLVE_RATIO}); {elapsed:.2?}",
            ptc.status,
            base.status,
            base.final_fnorm,
            events.map_or("unpaired".into(), |e| format!("{e:.2e}")),
            ptc.counters.linear_solves,
            base.counters.linear_solves,
        ),
    );
    ptc
}

fn at(t: Option<f64>) -> String {
    t.map_or(String::new(), |t| format!(" at t = {t:.2}"))
}

fn criterion_5(v: &mut Verdicts) -> RunResult {
    let sc = scenario_qss_difficulty();
    let ((qss, fallback, long), elapsed) = timed(|| {
        (
            run_scenario(&sc, ModelKind::Qss, Method::Trapezoidal),
            run_scenario(&sc, ModelKind::Qss, Method::QssTrapWithPtcFallback),
            run_scenario(&sc, ModelKind::LongTerm, Method::Trapezoidal),
        )
    });
    let (t1, t_end) = (sc.horizon.t1, sc.horizon.t_end);
    let qss_failed = match qss.status {
        RunStatus::IntegrationFailed { t } => {
            t > t1 && t < t_end && qss.message.as_deref().is_some_and(|m| m.starts_with("Newton corrector failed"))
        }
        _ => false,
    };
    let rescued = fallback.status == RunStatus::Converged && fallback.fallback_time.is_some();
    let long_at_rest = long.status == RunStatus::Completed && long.final_fnorm <= REST_TOL;
    let dist = max_abs_diff(&fallback.final_state.p(), &long.final_state.p());
    let pass = qss_failed && rescued && long_at_rest && dist <= QSS_MATCH_ATOL && elapsed < SCENARIO_BUDGET;
    v.report(
        5,
        "QSS difficulty rescued by the Ψtc fallback",
        pass,
        format!(
            "QSS trapezoidal {}{} ({}); fallback {}{}{}; long-term baseline {} (F = {:.1e}); \
             equilibrium distance {dist:.2e} (tol {QSS_MATCH_ATOL:.0e}); {elapsed:.2?}",
            qss.status,
            at(qss.failure_time()),
            qss.message.as_deref().unwrap_or("no Newton failure"),
            fallback.status,
            fallback.fallback_time.map_or(", Ψtc never engaged".to_string(), |t| format!(", switch at t = {t:.2}")),
            fallback.message.as_deref().map_or(String::new(), |m| format!(", {m}")),
            long.status,
            long.final_fnorm,
        ),
    );
    fallback
}

fn criterion_6(v: &mut Verdicts) -> RunResult {
    let sc = scenario_unstable();
    let ((ptc, base), elapsed) = timed(|| {
        (
            run_scenario(&sc, ModelKind::LongTerm, Method::Ptc),
            run_scenario(&sc, ModelKind::LongTerm, Method::Trapezoidal),
        )
    });
    let pass = base.failure_time().is_some()
        && ptc.status == RunStatus::IterationBoundReached
        && base.verdict(REST_TOL) == Verdict::Unstable
        && ptc.verdict(REST_TOL) == Verdict::Unstable
        && elapsed < SCENARIO_BUDGET;
    v.report(
        6,
        "unstable scenario",
        pass,
        format!(
            "baseline {}{}; ptc {} after {} iterations; verdicts {} / {}; {elapsed:.2?}",
            base.status,
            at(base.failure_time()),
            ptc.status,
            ptc.ptc_iterations(),
            base.verdict(REST_TOL),
            ptc.verdict(REST_TOL),
        ),
    );
    ptc
}

fn criterion_7(v: &mut Verdicts, runs: &Runs) {
    let all: Vec<_> = [&runs.stable_ptc, &runs.qss_fallback, &runs.unstable_ptc]
        .iter()
        .flat_map(|r| r.consistency.iter().copied())
        .collect();
    let worst = all.iter().map(|c| c.worst).fold(0.0, f64::max);
    let entered = [&runs.stable_ptc, &runs.qss_fallback, &runs.unstable_ptc]
        .iter()
        .all(|r| r.ptc_trace.is_none() || !r.consistency.is_empty());
    v.report(
        7,
        "every Ψtc entry state is consistent",
        entered && !all.is_empty() && worst <= CONSISTENCY_TOL,
        format!("{} entry checks over the bundled Ψtc runs, worst constraint residual {worst:.2e} (tol {CONSISTENCY_TOL:.0e})", all.len()),
    );
}

fn criterion_8(v: &mut Verdicts) {
    let ((ratio, errors), elapsed) = timed(|| {
        let lambda = -1.0;
        let prob = linear_ode(vec![vec![lambda]], vec![0.0]);
        let t_end = 1.0;
        let err = |h: f64| {
            let cfg = TrapConfig {
                h,
                ..TrapConfig::default()
            };
            let run = trap_integrate(&prob, &ode_state(vec![1.0]), t_end, &cfg, &mut NoStepEvents);
            (run.final_state.zc[0] - (lambda * t_end).exp()).abs()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        (e1 / e2, (e1, e2))
    });
    v.report(
        8,
        "trapezoidal rule is second order",
        ratio >= ORDER_RATIO.0 && ratio <= ORDER_RATIO.1 && elapsed < FAST_BUDGET,
        format!(
            "errors {:.3e} (h = 0.1) and {:.3e} (h = 0.05), ratio {ratio:.4} (want [{}, {}]), {elapsed:.2?}",
            errors.0, errors.1, ORDER_RATIO.0, ORDER_RATIO.1
        ),
    );
}

fn criterion_9(v: &mut Verdicts) {
    let mut runs = 0usize;
    let mut mismatches = Vec::new();
    for sc in [scenario_stable(), scenario_qss_difficulty(), scenario_unstable()] {
        for (kind, method) in [
            (ModelKind::LongTerm, Method::Ptc),
            (ModelKind::LongTerm, Method::Trapezoidal),
            (ModelKind::Qss, Method::QssTrapWithPtcFallback),
        ] {
            let plan = plan_for(&sc, kind, method);
            let a = execute(&sc, &plan).expect("bundled scenario runs");
            let b = execute(&sc, &plan).expect("bundled scenario runs");
            runs += 1;
            if a.csv != b.csv || a.result.counters != b.result.counters {
                mismatches.push(format!("{}/{kind}/{method}", sc.name));
            }
        }
    }
    v.report(
        9,
        "repeated runs are byte-identical",
        mismatches.is_empty(),
        format!("{runs} run pairs, mismatches: {}", if mismatches.is_empty() { "none".into() } else { mismatches.join(", ") }),
    );
}

fn main() -> ExitCode {
    let mut v = Verdicts { failed: 0 };
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    let runs = Runs {
        stable_ptc: criterion_4(&mut v),
        qss_fallback: criterion_5(&mut v),
        unstable_ptc: criterion_6(&mut v),
    };
    criterion_7(&mut v, &runs);
    criterion_8(&mut v);
    criterion_9(&mut v);
    if v.failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 9 criteria fail", v.failed);
        ExitCode::FAILURE
    }
}
