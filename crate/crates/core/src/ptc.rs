//! Pseudo-transient continuation (Ψtc).
//!
//! One iteration solves
//!
//! ```text
//!   (δ⁻¹ D + F'(p)) s = -F(p),     p ← p + s
//! ```
//!
//! and the pseudo-time step follows switched evolution relaxation,
//! `δ ← min(δ · ‖F_old‖ / ‖F_new‖, δ_max)`. A growing residual shrinks `δ`
//! instead of aborting, which is where the method gets its robustness.
//! Failure is signalled by exhausting the iteration bound.
//!
//! Algebraic rows (zero rows of `D`) see a plain Newton step in every
//! iteration; differential rows see one backward-Euler corrector step, see
//! [`backward_euler_first_newton`].

use std::fmt;

use crate::counters::Counters;
use crate::dae::{DaeProblem, SystemState};
use crate::error::{Error, Result};
use crate::numeric::{norm, solve_linear, Lu, Matrix, Vector};

/// Settings for [`ptc_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct PtcConfig {
    /// Initial (and post-event) pseudo-time step, seconds.
    pub delta0: f64,
    /// Cap on the pseudo-time step, seconds.
    pub delta_max: f64,
    /// Stop once `norm(F) <= f_tol`.
    pub f_tol: f64,
    /// Bound on the total number of iterations.
    pub max_iters: usize,
    /// Give up after this many consecutive reductions of `δ`.
    pub max_delta_shrink: usize,
}

impl Default for PtcConfig {
    fn default() -> Self {
        PtcConfig {
            delta0: 0.1,
            delta_max: 1e4,
            f_tol: 1e-6,
            max_iters: 2000,
            max_delta_shrink: 40,
        }
    }
}

impl PtcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < delta0 <= delta_max, got delta0 = {}, delta_max = {}",
                self.delta0, self.delta_max
            )));
        }
        if !(self.f_tol > 0.0) {
            return Err(Error::InvalidConfig("f_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// One Ψtc iteration as recorded in the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    /// 1-based iteration index, counted across event restarts.
    pub iter: usize,
    /// Pseudo-time step used by this iteration.
    pub delta: f64,
    /// `norm(F)` after the update.
    pub fnorm: f64,
    pub step_norm: f64,
    /// Pseudo-time clock after the iteration.
    pub t: f64,
    /// First iteration after a discrete jump (δ was reset).
    pub after_restart: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PtcTrace {
    pub records: Vec<IterRecord>,
    /// `norm(F)` at the starting point.
    pub initial_fnorm: f64,
    pub counters: Counters,
    /// Number of discrete-event restarts seen by the solver.
    pub restarts: usize,
}

impl PtcTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PtcStatus {
    Converged,
    IterationBoundReached,
    LinearSolveFailure,
    NonFiniteResidual,
    /// The consistency-restoring step after a discrete jump failed.
    EventRestartFailure,
}

impl fmt::Display for PtcStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PtcStatus::Converged => "converged",
            PtcStatus::IterationBoundReached => "iteration-bound-reached",
            PtcStatus::LinearSolveFailure => "linear-solve-failure",
            PtcStatus::NonFiniteResidual => "non-finite-residual",
            PtcStatus::EventRestartFailure => "event-restart-failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: PtcStatus,
    pub final_state: SystemState,
    pub final_fnorm: f64,
    pub trace: PtcTrace,
    /// Human-readable reason when the status is not `Converged`.
    pub message: Option<String>,
}

/// What the event layer wants the solver to do next.
#[derive(Clone, Debug, PartialEq)]
pub enum HookAction {
    /// Nothing pending.
    Continue,
    /// A device timer is running; do not declare convergence yet.
    Hold,
    /// Discrete variables jumped and consistency was restored; continue
    /// from this state with `δ = δ₀`.
    Restart(SystemState),
}

/// Interposes discrete events between Ψtc iterations.
pub trait PtcHook {
    /// Called on entry (`dt = 0`) and after every iteration with the
    /// pseudo-time step that was just taken.
    fn on_iterate(&mut self, prob: &DaeProblem, state: &SystemState, dt: f64) -> Result<HookAction>;

    /// Work done by the hook itself (restart steps), merged into the trace.
    fn take_counters(&mut self) -> Counters {
        Counters::default()
    }
}

/// A hook that never intervenes.
pub struct NoEvents;

impl PtcHook for NoEvents {
    fn on_iterate(&mut self, _: &DaeProblem, _: &SystemState, _: f64) -> Result<HookAction> {
        Ok(HookAction::Continue)
    }
}

/// Switched evolution relaxation: `min(δ_prev · ‖F_prev‖ / ‖F_cur‖, δ_max)`.
pub fn ser_update(delta_prev: f64, fnorm_prev: f64, fnorm_cur: f64, delta_max: f64) -> f64 {
    debug_assert!(delta_prev > 0.0 && fnorm_prev > 0.0 && fnorm_cur > 0.0);
    (delta_prev * (fnorm_prev / fnorm_cur)).min(delta_max)
}

/// `δ⁻¹ D + J`, touching only the diagonal entries where `D` is nonzero.
fn iteration_matrix(jac: &Matrix, mass: &Matrix, delta: f64) -> Matrix {
    jac.add_scaled(1.0 / delta, mass)
}

/// One Ψtc update from a precomputed residual. Returns the new `p`.
fn step_from(
    prob: &DaeProblem,
    zd: &[f64],
    p: &[f64],
    residual: &[f64],
    delta: f64,
    mass: &Matrix,
    counters: &mut Counters,
) -> Result<Vector> {
    let jac = prob.jacobian_at(zd, p)?;
    counters.jacobian_evals += 1;
    let a = iteration_matrix(&jac, mass, delta);
    let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
    counters.linear_solves += 1;
    let s = solve_linear(&a, &rhs)?;
    let mut next = Vector::from(p);
    next.axpy(1.0, &s);
    Ok(next)
}

/// A single Ψtc iteration from `s` with pseudo-time step `delta` and mass
/// matrix `mass`. Returns the updated state and its residual norm; `t` and
/// `z_d` are left alone.
pub fn ptc_step(prob: &DaeProblem, s: &SystemState, delta: f64, mass: &Matrix) -> Result<(SystemState, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig("delta must be positive".into()));
    }
    let mut counters = Counters::default();
    let p = s.p();
    let r = prob.residual_at(&s.zd, &p)?;
    let next = step_from(prob, &s.zd, &p, &r, delta, mass, &mut counters)?;
    let fnorm = norm(&prob.residual_at(&s.zd, &next)?);
    Ok((s.with_p(&next), fnorm))
}

/// First Newton iterate of the backward-Euler corrector, started from the
/// predictor `η₀ = p_n`.
///
/// The corrector solves `G(η) = η + δ D⁻¹ F(η) - p_n = 0`, so
/// `η₁ = p_n - (I + δ D⁻¹ F'(p_n))⁻¹ δ D⁻¹ F(p_n)`. Requires an invertible
/// mass matrix, i.e. a problem without algebraic rows.
pub fn backward_euler_first_newton(prob: &DaeProblem, s: &SystemState, delta: f64) -> Result<SystemState> {
    let mass = prob.assemble_mass();
    let n = mass.rows();
    let mass_lu = Lu::factor(&mass)?;
    let p = s.p();
    let f = prob.residual_at(&s.zd, &p)?;
    let jac = prob.jacobian_at(&s.zd, &p)?;

    // D⁻¹ F'(p_n), column by column
    let mut dinv_jac = Matrix::zeros(n, n);
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| jac[(i, j)]).collect();
        dinv_jac.set_column(j, &mass_lu.solve(&col)?);
    }
    let dinv_f = mass_lu.solve(&f)?;

    let m = Matrix::identity(n).add_scaled(delta, &dinv_jac);
    // G(η₀) = δ D⁻¹ F(p_n) because η₀ = p_n
    let g0 = dinv_f.scaled(delta);
    let correction = solve_linear(&m, &g0)?;
    let mut eta = p.clone();
    eta.axpy(-1.0, &correction);
    Ok(s.with_p(&eta))
}

fn status_for(err: &Error) -> PtcStatus {
    match err {
        Error::SingularMatrix { .. } => PtcStatus::LinearSolveFailure,
        Error::NonFiniteResidual(_) => PtcStatus::NonFiniteResidual,
        _ => PtcStatus::EventRestartFailure,
    }
}

/// Runs Ψtc from `s0` until `norm(F) <= f_tol` with no event pending, or
/// until the iteration bound is reached.
///
/// The pseudo-time clock `state.t` advances by `δ` each iteration so that
/// event timers have something to run on. Errors never abort the solve;
/// they are reported through [`SolveOutcome::status`].
pub fn ptc_solve(prob: &DaeProblem, s0: &SystemState, cfg: &PtcConfig, hook: &mut dyn PtcHook) -> SolveOutcome {
    let mass = prob.assemble_mass();
    let mut trace = PtcTrace::default();
    let mut state = s0.clone();

    let finish = |status: PtcStatus,
                  state: SystemState,
                  fnorm: f64,
                  mut trace: PtcTrace,
                  hook: &mut dyn PtcHook,
                  message: Option<String>| {
        trace.counters += hook.take_counters();
        SolveOutcome {
            status,
            final_state: state,
            final_fnorm: fnorm,
            trace,
            message,
        }
    };

    if let Err(e) = cfg.validate() {
        return finish(PtcStatus::EventRestartFailure, state, f64::NAN, trace, hook, Some(e.to_string()));
    }

    let mut residual = match prob.eval_residual(&state) {
        Ok(r) => r,
        Err(e) => return finish(status_for(&e), state, f64::NAN, trace, hook, Some(e.to_string())),
    };
    trace.counters.residual_evals += 1;
    let mut fnorm = norm(&residual);
    trace.initial_fnorm = fnorm;

    let mut delta = cfg.delta0;
    let mut last_dt = 0.0;
    let mut shrinks = 0usize;
    let mut after_restart = false;

    loop {
        let pending = match hook.on_iterate(prob, &state, last_dt) {
            Ok(HookAction::Continue) => false,
            Ok(HookAction::Hold) => true,
            Ok(HookAction::Restart(next)) => {
                state = next;
                residual = match prob.eval_residual(&state) {
                    Ok(r) => r,
                    Err(e) => return finish(status_for(&e), state, fnorm, trace, hook, Some(e.to_string())),
                };
                trace.counters.residual_evals += 1;
                fnorm = norm(&residual);
                delta = cfg.delta0;
                shrinks = 0;
                after_restart = true;
                trace.restarts += 1;
                // the jump may have armed further timers
                true
            }
            Err(e) => {
                let status = match e {
                    Error::SingularMatrix { .. } | Error::NonFiniteResidual(_) => status_for(&e),
                    _ => PtcStatus::EventRestartFailure,
                };
                return finish(status, state, fnorm, trace, hook, Some(e.to_string()));
            }
        };

        if fnorm <= cfg.f_tol && !pending {
            return finish(PtcStatus::Converged, state, fnorm, trace, hook, None);
        }
        if trace.records.len() >= cfg.max_iters {
            let msg = format!("iteration bound {} reached with norm(F) = {fnorm:e}", cfg.max_iters);
            return finish(PtcStatus::IterationBoundReached, state, fnorm, trace, hook, Some(msg));
        }

        let p = state.p();
        let next = match step_from(prob, &state.zd, &p, &residual, delta, &mass, &mut trace.counters) {
            Ok(v) => v,
            Err(e) => return finish(status_for(&e), state, fnorm, trace, hook, Some(e.to_string())),
        };
        let new_residual = match prob.residual_at(&state.zd, &next) {
            Ok(r) => r,
            Err(e) => return finish(status_for(&e), state, fnorm, trace, hook, Some(e.to_string())),
        };
        trace.counters.residual_evals += 1;
        trace.counters.steps += 1;

        let step_norm = norm(
            &next
                .iter()
                .zip(p.iter())
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        let new_fnorm = norm(&new_residual);
        let used = delta;
        state = state.with_p(&next);
        state.t += used;
        trace.records.push(IterRecord {
            iter: trace.records.len() + 1,
            delta: used,
            fnorm: new_fnorm,
            step_norm,
            t: state.t,
            after_restart,
        });
        after_restart = false;

        delta = if new_fnorm > 0.0 {
            ser_update(delta, fnorm, new_fnorm, cfg.delta_max)
        } else {
            cfg.delta_max
        };
        if delta < used {
            shrinks += 1;
        } else {
            shrinks = 0;
        }
        residual = new_residual;
        fnorm = new_fnorm;
        last_dt = used;

        if shrinks >= cfg.max_delta_shrink {
            let msg = format!("pseudo-time step shrank {shrinks} times in a row (norm(F) = {fnorm:e})");
            trace.counters += hook.take_counters();
            return SolveOutcome {
                status: PtcStatus::IterationBoundReached,
                final_state: state,
                final_fnorm: fnorm,
                trace,
                message: Some(msg),
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{Dims, FnModel, ModelKind};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn scalar_ode(rhs: fn(f64) -> f64) -> DaeProblem {
        let model = FnModel::new(Dims::new(1, 0, 0, 0), move |_, p, hc, _, _| hc[0] = rhs(p[0]));
        DaeProblem::new(Arc::new(model), ModelKind::LongTerm)
    }

    /// h_c = -z with its exact Jacobian
    fn decay() -> DaeProblem {
        let model = FnModel::new(Dims::new(1, 0, 0, 0), |_, p, hc, _, _| hc[0] = -p[0])
            .with_jacobian(|_, _| Matrix::from_rows(&[&[-1.0]]));
        DaeProblem::new(Arc::new(model), ModelKind::LongTerm)
    }

    fn scalar_state(v: f64) -> SystemState {
        SystemState::new(0.0, vec![v], vec![], vec![], vec![])
    }

    #[test]
    fn ser_examples() {
        assert_abs_diff_eq!(ser_update(0.1, 2.0, 1.0, 1e6), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(ser_update(0.1, 1.0, 2.0, 1e6), 0.05, epsilon = 1e-15);
        assert_eq!(ser_update(1e5, 1.0, 1e-4, 1e6), 1e6);
    }

    #[test]
    fn scalar_step_by_hand() {
        // F(x) = x: (1/δ + 1) s = -x with δ = 1, x = 1 gives s = -1/2
        let prob = decay();
        let d = prob.assemble_mass();
        let (next, fnorm) = ptc_step(&prob, &scalar_state(1.0), 1.0, &d).unwrap();
        assert_abs_diff_eq!(next.zc[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fnorm, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn huge_delta_is_a_newton_step() {
        let prob = scalar_ode(|z| -z);
        let d = prob.assemble_mass();
        let (next, _) = ptc_step(&prob, &scalar_state(1.0), 1e9, &d).unwrap();
        assert!(next.zc[0].abs() < 1e-8);
    }

    #[test]
    fn algebraic_row_sees_pure_newton() {
        let model = FnModel::new(Dims::new(0, 0, 0, 1), |_, p, _, _, g| g[0] = p[0] - 2.0)
            .with_jacobian(|_, _| Matrix::from_rows(&[&[1.0]]));
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let d = prob.assemble_mass();
        for delta in [1e-3, 1.0, 1e3] {
            let s = SystemState::new(0.0, vec![], vec![], vec![], vec![-7.0]);
            let (next, _) = ptc_step(&prob, &s, delta, &d).unwrap();
            assert_abs_diff_eq!(next.y[0], 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn nonpositive_delta_rejected() {
        let prob = scalar_ode(|z| -z);
        let d = prob.assemble_mass();
        assert!(ptc_step(&prob, &scalar_state(1.0), 0.0, &d).is_err());
    }

    #[test]
    fn linear_decay_converges_with_growing_delta() {
        let prob = scalar_ode(|z| -z);
        let cfg = PtcConfig {
            delta0: 0.1,
            delta_max: 1e3,
            f_tol: 1e-8,
            ..PtcConfig::default()
        };
        let out = ptc_solve(&prob, &scalar_state(1.0), &cfg, &mut NoEvents);
        assert_eq!(out.status, PtcStatus::Converged);
        assert!(out.final_state.zc[0].abs() <= 1e-8);
        let deltas: Vec<f64> = out.trace.records.iter().map(|r| r.delta).collect();
        for w in deltas.windows(2) {
            assert!(w[1] > w[0] || w[1] == cfg.delta_max, "δ not increasing: {deltas:?}");
        }
    }

    #[test]
    fn residual_bounded_below_hits_iteration_bound() {
        // F(x) = x^2 + 1 never vanishes; here h_c = -(x^2 + 1)
        let prob = scalar_ode(|z| -(z * z + 1.0));
        let cfg = PtcConfig {
            max_iters: 50,
            ..PtcConfig::default()
        };
        let out = ptc_solve(&prob, &scalar_state(0.3), &cfg, &mut NoEvents);
        assert_eq!(out.status, PtcStatus::IterationBoundReached);
        assert!(out.trace.iterations() <= 50);
    }

    #[test]
    fn start_at_equilibrium_needs_no_iterations() {
        let prob = scalar_ode(|z| -z);
        let out = ptc_solve(&prob, &scalar_state(0.0), &PtcConfig::default(), &mut NoEvents);
        assert_eq!(out.status, PtcStatus::Converged);
        assert_eq!(out.trace.iterations(), 0);
        assert_eq!(out.trace.counters.linear_solves, 0);
    }

    #[test]
    fn clock_accumulates_delta() {
        let prob = scalar_ode(|z| -z);
        let out = ptc_solve(&prob, &scalar_state(1.0), &PtcConfig::default(), &mut NoEvents);
        let total: f64 = out.trace.records.iter().map(|r| r.delta).sum();
        assert_abs_diff_eq!(out.final_state.t, total, epsilon = 1e-9 * total);
    }

    #[test]
    fn backward_euler_identity_scalar() {
        let prob = decay();
        let be = backward_euler_first_newton(&prob, &scalar_state(1.0), 1.0).unwrap();
        assert_abs_diff_eq!(be.zc[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn backward_euler_small_delta_barely_moves() {
        let prob = scalar_ode(|z| -z * z * z - z);
        let be = backward_euler_first_newton(&prob, &scalar_state(1.0), 1e-10).unwrap();
        assert!((be.zc[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_euler_rejects_algebraic_rows() {
        let model = FnModel::new(Dims::new(1, 0, 0, 1), |_, p, hc, _, g| {
            hc[0] = -p[0];
            g[0] = p[1];
        });
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let s = SystemState::new(0.0, vec![1.0], vec![], vec![], vec![0.0]);
        assert!(matches!(
            backward_euler_first_newton(&prob, &s, 0.5),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn invalid_config_is_reported() {
        let prob = scalar_ode(|z| -z);
        let cfg = PtcConfig {
            delta0: 10.0,
            delta_max: 1.0,
            ..PtcConfig::default()
        };
        let out = ptc_solve(&prob, &scalar_state(1.0), &cfg, &mut NoEvents);
        assert_ne!(out.status, PtcStatus::Converged);
        assert!(out.message.unwrap().contains("delta0"));
    }

    struct HoldOnce(bool);
    impl PtcHook for HoldOnce {
        fn on_iterate(&mut self, _: &DaeProblem, _: &SystemState, _: f64) -> Result<HookAction> {
            if self.0 {
                self.0 = false;
                Ok(HookAction::Hold)
            } else {
                Ok(HookAction::Continue)
            }
        }
    }

    #[test]
    fn hold_prevents_early_convergence() {
        let prob = scalar_ode(|z| -z);
        let out = ptc_solve(&prob, &scalar_state(0.0), &PtcConfig::default(), &mut HoldOnce(true));
        assert_eq!(out.status, PtcStatus::Converged);
        assert_eq!(out.trace.iterations(), 1);
    }

    struct JumpOnce {
        fired: bool,
    }
    impl PtcHook for JumpOnce {
        fn on_iterate(&mut self, _: &DaeProblem, s: &SystemState, _: f64) -> Result<HookAction> {
            if !self.fired && s.zc[0].abs() < 1e-3 {
                self.fired = true;
                let mut next = s.clone();
                next.zc[0] = 1.0;
                return Ok(HookAction::Restart(next));
            }
            Ok(HookAction::Continue)
        }
    }

    #[test]
    fn restart_resets_delta() {
        let prob = scalar_ode(|z| -z);
        let cfg = PtcConfig::default();
        let out = ptc_solve(&prob, &scalar_state(1.0), &cfg, &mut JumpOnce { fired: false });
        assert_eq!(out.status, PtcStatus::Converged);
        assert_eq!(out.trace.restarts, 1);
        let first_after: Vec<&IterRecord> = out.trace.records.iter().filter(|r| r.after_restart).collect();
        assert_eq!(first_after.len(), 1);
        assert_eq!(first_after[0].delta, cfg.delta0);
    }
}
