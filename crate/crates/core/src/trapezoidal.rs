//! Implicit trapezoidal integration with a Newton corrector.
//!
//! For a step of length `h` from `p_n` the corrector solves `H(p) = 0`,
//! where on differential rows
//!
//! ```text
//!   H_i = p_i - p_n,i + (h/2) (F_i(p) + F_i(p_n))
//! ```
//!
//! (with `F = [-h_c; -f; -g]` this is `z_c - z_cn - (h/2)(h_c + h_cn)`),
//! and on algebraic rows `H_i = -F_i`, i.e. `g` itself (plus `f` in the QSS
//! model). The iteration matrix is the exact Jacobian of `H`:
//!
//! ```text
//!   A_i = e_i + (h/2) F'_i   (differential rows)
//!   A_i = -F'_i              (algebraic rows)
//! ```
//!
//! Newton takes full steps. Failure to converge within the iteration budget
//! is reported as [`Error::NewtonNoConvergence`]; the hybrid layer treats
//! that as the numerical-difficulty signal.

use crate::counters::Counters;
use crate::dae::{DaeProblem, MassStructure, SystemState};
use crate::error::{Error, Result};
use crate::numeric::{norm, solve_linear, Matrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct TrapConfig {
    /// Step length, seconds.
    pub h: f64,
    /// Both the differential and the constraint block of `H` must drop
    /// below this (scaled) norm.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig {
            h: 0.05,
            newton_tol: 1e-8,
            newton_max_iters: 20,
        }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.newton_tol > 0.0) || self.newton_max_iters == 0 {
            return Err(Error::InvalidConfig(format!(
                "need h > 0, newton_tol > 0 and newton_max_iters >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Trapezoidal residual `H(p)` for a step of length `h` from `p_n`, whose
/// residual `F(p_n)` is passed in as `f_n`.
pub fn trap_residual(
    prob: &DaeProblem,
    zd: &[f64],
    p: &[f64],
    p_n: &[f64],
    f_n: &[f64],
    h: f64,
) -> Result<Vector> {
    let ms = prob.mass_structure();
    let f = prob.residual_at(zd, p)?;
    Ok(assemble_h(&ms, &f, p, p_n, f_n, h))
}

fn assemble_h(ms: &MassStructure, f: &[f64], p: &[f64], p_n: &[f64], f_n: &[f64], h: f64) -> Vector {
    (0..ms.total)
        .map(|i| {
            if ms.is_differential(i) {
                p[i] - p_n[i] + 0.5 * h * (f[i] + f_n[i])
            } else {
                -f[i]
            }
        })
        .collect::<Vec<f64>>()
        .into()
}

/// Iteration matrix `A = ∂H/∂p` built from `F'(p)`.
pub fn trap_matrix(prob: &DaeProblem, jac: &Matrix, h: f64) -> Matrix {
    let ms = prob.mass_structure();
    let mut a = jac.clone();
    for i in 0..ms.total {
        let row = a.row_mut(i);
        if ms.is_differential(i) {
            row.iter_mut().for_each(|v| *v *= 0.5 * h);
            row[i] += 1.0;
        } else {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    a
}

/// Splits a trapezoidal residual into (differential, constraint) norms.
fn block_norms(ms: &MassStructure, h: &[f64]) -> (f64, f64) {
    (norm(&h[..ms.active_count]), norm(&h[ms.active_count..]))
}

/// One trapezoidal step of length `h`, predictor `p_n`. The returned state
/// has `t` advanced by `h`.
pub fn trap_step(
    prob: &DaeProblem,
    s: &SystemState,
    h: f64,
    cfg: &TrapConfig,
    counters: &mut Counters,
) -> Result<SystemState> {
    let ms = prob.mass_structure();
    let p_n = s.p();
    let f_n = prob.residual_at(&s.zd, &p_n)?;
    counters.residual_evals += 1;
    let mut p = p_n.clone();
    let mut last = f64::INFINITY;
    for iter in 0..=cfg.newton_max_iters {
        let f = match prob.residual_at(&s.zd, &p) {
            Ok(f) => f,
            // an iterate that left the model's domain is a failed iteration
            Err(Error::NonFiniteResidual(_)) if iter > 0 => break,
            Err(e) => return Err(e),
        };
        counters.residual_evals += 1;
        let hv = assemble_h(&ms, &f, &p, &p_n, &f_n, h);
        let (nd, na) = block_norms(&ms, &hv);
        last = nd.max(na);
        if nd <= cfg.newton_tol && na <= cfg.newton_tol {
            let mut next = s.with_p(&p);
            next.t = s.t + h;
            counters.steps += 1;
            return Ok(next);
        }
        if iter == cfg.newton_max_iters {
            break;
        }
        let jac = prob.jacobian_at(&s.zd, &p)?;
        counters.jacobian_evals += 1;
        let a = trap_matrix(prob, &jac, h);
        let rhs: Vec<f64> = hv.iter().map(|v| -v).collect();
        counters.linear_solves += 1;
        let step = solve_linear(&a, &rhs)?;
        p.axpy(1.0, &step);
        if !p.is_finite() {
            break;
        }
    }
    Err(Error::NewtonNoConvergence {
        t: s.t,
        iterations: cfg.newton_max_iters,
        residual: last,
    })
}

/// Interposes discrete events at step boundaries.
pub trait StepHook {
    /// Called on entry (`dt = 0`) and after each accepted step of length
    /// `dt`. Returning a state replaces the current one (typically with
    /// jumped discrete variables).
    fn at_boundary(&mut self, prob: &DaeProblem, state: &SystemState, dt: f64) -> Result<Option<SystemState>>;
}

/// A hook that never intervenes.
pub struct NoStepEvents;

impl StepHook for NoStepEvents {
    fn at_boundary(&mut self, _: &DaeProblem, _: &SystemState, _: f64) -> Result<Option<SystemState>> {
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrapOutcome {
    Completed,
    /// Integration could not continue past `t`.
    Failed { t: f64, error: Error },
}

impl TrapOutcome {
    pub fn failure_time(&self) -> Option<f64> {
        match self {
            TrapOutcome::Completed => None,
            TrapOutcome::Failed { t, .. } => Some(*t),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrapRun {
    /// `s0` followed by every accepted step.
    pub trajectory: Vec<SystemState>,
    /// The state integration would continue from: the last accepted step
    /// after any discrete jump, or the start of the failing step.
    pub final_state: SystemState,
    pub outcome: TrapOutcome,
    pub counters: Counters,
}

impl TrapRun {
    pub fn last(&self) -> &SystemState {
        self.trajectory.last().expect("trajectory always holds s0")
    }
}

/// Fixed-step march from `s0.t` to `t_end`; the last step is shortened to
/// land on `t_end` exactly.
pub fn trap_integrate(
    prob: &DaeProblem,
    s0: &SystemState,
    t_end: f64,
    cfg: &TrapConfig,
    hook: &mut dyn StepHook,
) -> TrapRun {
    let mut counters = Counters::default();
    let mut trajectory = vec![s0.clone()];
    let fail = |t: f64, error: Error, trajectory: Vec<SystemState>, final_state: SystemState, counters: Counters| TrapRun {
        trajectory,
        final_state,
        outcome: TrapOutcome::Failed { t, error },
        counters,
    };
    if let Err(e) = cfg.validate() {
        return fail(s0.t, e, trajectory, s0.clone(), counters);
    }
    let mut state = match hook.at_boundary(prob, s0, 0.0) {
        Ok(Some(s)) => s,
        Ok(None) => s0.clone(),
        Err(e) => return fail(s0.t, e, trajectory, s0.clone(), counters),
    };
    let t_start = s0.t;
    let span = t_end - t_start;
    if span <= 0.0 {
        return TrapRun {
            trajectory,
            final_state: state,
            outcome: TrapOutcome::Completed,
            counters,
        };
    }
    let n_steps = (span / cfg.h - 1e-9).ceil().max(1.0) as usize;
    for k in 1..=n_steps {
        let t_next = if k == n_steps { t_end } else { t_start + k as f64 * cfg.h };
        let h = t_next - state.t;
        let mut next = match trap_step(prob, &state, h, cfg, &mut counters) {
            Ok(s) => s,
            Err(e) => return fail(state.t, e, trajectory, state, counters),
        };
        next.t = t_next;
        trajectory.push(next.clone());
        state = match hook.at_boundary(prob, &next, h) {
            Ok(Some(s)) => s,
            Ok(None) => next,
            Err(e) => return fail(next.t, e, trajectory, next, counters),
        };
    }
    TrapRun {
        trajectory,
        final_state: state,
        outcome: TrapOutcome::Completed,
        counters,
    }
}
