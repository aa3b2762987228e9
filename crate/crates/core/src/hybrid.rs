//! Discrete events and the run drivers.
//!
//! Discrete variables `z_d` only change between integration steps or Ψtc
//! iterations. Device timers advance with whatever clock the continuous
//! solver provides: simulated time for the trapezoidal rule, accumulated
//! pseudo-time `Σ δ` for Ψtc. After a jump the continuous variables are
//! generally inconsistent; Ψtc restores consistency with one trapezoidal
//! step of length `δ₀` and then restarts its step law from `δ₀`.

use std::fmt;

use crate::counters::Counters;
use crate::dae::{DaeProblem, ModelKind, SystemState};
use crate::error::{Error, Result};
use crate::numeric::norm;
use crate::ptc::{ptc_solve, HookAction, PtcConfig, PtcHook, PtcStatus, PtcTrace};
use crate::trapezoidal::{trap_integrate, trap_step, StepHook, TrapConfig, TrapOutcome};

/// When a rule fires and what it does to its `z_d` entry.
#[derive(Clone, Debug, PartialEq)]
pub enum Guard {
    /// Voltage `p[v_index]` outside `[v_ref - deadband, v_ref + deadband]`
    /// on the same side for at least `delay`; moves the entry one `step`
    /// in the restoring direction within `[min, max]`.
    Deadband {
        v_index: usize,
        v_ref: f64,
        deadband: f64,
        delay: f64,
        step: f64,
        min: f64,
        max: f64,
    },
    /// `p[index] >= threshold` while the entry equals `from`; sets it to `to`.
    Threshold {
        index: usize,
        threshold: f64,
        from: f64,
        to: f64,
    },
    /// Sets the entry to `value` once the clock reaches `at`.
    Scheduled { at: f64, value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRule {
    pub device: String,
    /// Index into `z_d` of the variable this rule drives.
    pub zd_index: usize,
    pub guard: Guard,
}

impl EventRule {
    pub fn delay(&self) -> f64 {
        match self.guard {
            Guard::Deadband { delay, .. } => delay,
            _ => 0.0,
        }
    }
}

/// Running timer of one rule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleTimer {
    /// Time spent continuously outside the band.
    pub elapsed: f64,
    /// `+1` below the band, `-1` above, `0` inside.
    pub direction: i8,
    /// A saturated request was logged for the current excursion.
    pub saturated: bool,
    /// Scheduled rules fire once.
    pub fired: bool,
}

/// A requested change of one `z_d` entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub rule: usize,
    pub device: String,
    pub zd_index: usize,
    pub old: f64,
    pub new: f64,
    /// Admissible range of the entry, if bounded.
    pub bounds: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLogEntry {
    pub t: f64,
    pub device: String,
    pub old: f64,
    pub new: f64,
    /// The request fell outside the admissible range and was ignored.
    pub saturated: bool,
}

impl fmt::Display for EventLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.saturated {
            write!(f, "{:.6} {} {} -> {} (saturated)", self.t, self.device, self.old, self.new)
        } else {
            write!(f, "{:.6} {} {} -> {}", self.t, self.device, self.old, self.new)
        }
    }
}

fn outside(v: f64, v_ref: f64, deadband: f64) -> i8 {
    if v < v_ref - deadband {
        1
    } else if v > v_ref + deadband {
        -1
    } else {
        0
    }
}

const TIME_SLACK: f64 = 1e-9;

/// All rules whose guard holds at `s`, ordered by device id.
pub fn detect_events(rules: &[EventRule], timers: &[RuleTimer], s: &SystemState) -> Vec<Transition> {
    let p = s.p();
    let mut out: Vec<Transition> = rules
        .iter()
        .zip(timers)
        .enumerate()
        .filter_map(|(k, (rule, timer))| {
            let old = s.zd[rule.zd_index];
            let (new, bounds) = match rule.guard {
                Guard::Deadband {
                    v_index,
                    v_ref,
                    deadband,
                    delay,
                    step,
                    min,
                    max,
                } => {
                    let dir = outside(p[v_index], v_ref, deadband);
                    if dir == 0 || dir != timer.direction || timer.elapsed + TIME_SLACK < delay || timer.saturated {
                        return None;
                    }
                    (old + f64::from(dir) * step, Some((min, max)))
                }
                Guard::Threshold {
                    index,
                    threshold,
                    from,
                    to,
                } => {
                    if old != from || p[index] < threshold {
                        return None;
                    }
                    (to, None)
                }
                Guard::Scheduled { at, value } => {
                    if timer.fired || s.t + TIME_SLACK < at {
                        return None;
                    }
                    (value, None)
                }
            };
            Some(Transition {
                rule: k,
                device: rule.device.clone(),
                zd_index: rule.zd_index,
                old,
                new,
                bounds,
            })
        })
        .collect();
    out.sort_by(|a, b| a.device.cmp(&b.device).then(a.zd_index.cmp(&b.zd_index)));
    out
}

/// Applies `transitions` to `z_d` and returns the jumped state together with
/// one log entry per transition. Requests outside their admissible range
/// leave the entry unchanged and are logged as saturated.
pub fn apply_events(s: &SystemState, transitions: &[Transition]) -> (SystemState, Vec<EventLogEntry>) {
    let mut next = s.clone();
    let mut log = Vec::with_capacity(transitions.len());
    for tr in transitions {
        let admissible = tr
            .bounds
            .map_or(true, |(lo, hi)| tr.new >= lo - 1e-12 && tr.new <= hi + 1e-12);
        if admissible {
            next.zd[tr.zd_index] = tr.new;
        }
        log.push(EventLogEntry {
            t: s.t,
            device: tr.device.clone(),
            old: tr.old,
            new: tr.new,
            saturated: !admissible,
        });
    }
    (next, log)
}

/// Checks a single transition against its admissible range.
pub fn check_transition(tr: &Transition) -> Result<()> {
    match tr.bounds {
        Some((min, max)) if tr.new < min - 1e-12 || tr.new > max + 1e-12 => Err(Error::InadmissibleTransition {
            device: tr.device.clone(),
            value: tr.new,
            min,
            max,
        }),
        _ => Ok(()),
    }
}

/// Rules plus their timers; carried across the phases of a run.
#[derive(Clone, Debug)]
pub struct EventMonitor {
    pub rules: Vec<EventRule>,
    pub timers: Vec<RuleTimer>,
    pub log: Vec<EventLogEntry>,
}

impl EventMonitor {
    pub fn new(rules: Vec<EventRule>) -> Self {
        let timers = vec![RuleTimer::default(); rules.len()];
        EventMonitor {
            rules,
            timers,
            log: Vec::new(),
        }
    }

    /// Advances the timers by `dt` using the voltages at `s`.
    pub fn advance(&mut self, s: &SystemState, dt: f64) {
        let p = s.p();
        for (rule, timer) in self.rules.iter().zip(self.timers.iter_mut()) {
            if let Guard::Deadband {
                v_index,
                v_ref,
                deadband,
                ..
            } = rule.guard
            {
                let dir = outside(p[v_index], v_ref, deadband);
                if dir == 0 || dir != timer.direction {
                    *timer = RuleTimer {
                        direction: dir,
                        ..RuleTimer::default()
                    };
                } else {
                    timer.elapsed += dt;
                }
            }
        }
    }

    /// `true` while some timer is running towards an admissible transition,
    /// or a scheduled rule has not fired yet.
    pub fn armed(&self, s: &SystemState) -> bool {
        self.rules.iter().zip(&self.timers).any(|(rule, timer)| match rule.guard {
            Guard::Deadband { step, min, max, .. } => {
                let target = s.zd[rule.zd_index] + f64::from(timer.direction) * step;
                timer.direction != 0 && !timer.saturated && target >= min - 1e-12 && target <= max + 1e-12
            }
            Guard::Scheduled { .. } => !timer.fired,
            Guard::Threshold { .. } => false,
        })
    }

    /// Detects and applies due transitions. Returns the jumped state if any
    /// `z_d` entry changed.
    pub fn fire(&mut self, s: &SystemState) -> Option<SystemState> {
        let transitions = detect_events(&self.rules, &self.timers, s);
        if transitions.is_empty() {
            return None;
        }
        let (next, entries) = apply_events(s, &transitions);
        for (tr, entry) in transitions.iter().zip(&entries) {
            let timer = &mut self.timers[tr.rule];
            timer.elapsed = 0.0;
            if entry.saturated {
                timer.saturated = true;
            }
            if matches!(self.rules[tr.rule].guard, Guard::Scheduled { .. }) {
                timer.fired = true;
            }
        }
        self.log.extend(entries);
        (next.zd != s.zd).then_some(next)
    }

    /// Number of applied (non-saturated) transitions so far.
    pub fn jumps(&self) -> usize {
        self.log.iter().filter(|e| !e.saturated).count()
    }
}

/// A model with its initial point and discrete rules.
#[derive(Clone, Debug)]
pub struct HybridSystem {
    pub problem: DaeProblem,
    pub initial: SystemState,
    pub rules: Vec<EventRule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Trapezoidal,
    Ptc,
    QssTrapWithPtcFallback,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Trapezoidal => "trap",
            Method::Ptc => "ptc",
            Method::QssTrapWithPtcFallback => "qss-fallback",
        })
    }
}

/// What to run and with which settings.
///
/// The long-term model is always integrated up to the handoff time: `t0`
/// for Ψtc on the long-term model, `t1` for anything on the QSS model.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub model_kind: ModelKind,
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    pub t_end: f64,
    pub ptc: PtcConfig,
    pub trap: TrapConfig,
}

impl RunPlan {
    pub fn new(model_kind: ModelKind, method: Method, t_end: f64) -> Self {
        RunPlan {
            model_kind,
            method,
            t0: 5.0,
            t1: 30.0,
            t_end,
            ptc: PtcConfig::default(),
            trap: TrapConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t0 && self.t0 <= self.t1 && self.t1 <= self.t_end) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= t0 <= t1 <= t_end, got t0 = {}, t1 = {}, t_end = {}",
                self.t0, self.t1, self.t_end
            )));
        }
        if self.method == Method::QssTrapWithPtcFallback && self.model_kind != ModelKind::Qss {
            return Err(Error::InvalidConfig("qss-fallback requires the QSS model".into()));
        }
        self.ptc.validate()?;
        self.trap.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    /// Ψtc reached `norm(F) <= f_tol` with no timer running.
    Converged,
    /// Time integration reached `t_end`.
    Completed,
    /// Ψtc exhausted its iteration bound: no equilibrium was found.
    IterationBoundReached,
    /// Time integration could not continue past `t`.
    IntegrationFailed { t: f64 },
    /// Any other failure (singular matrix, non-finite residual, failed
    /// restart step, bad configuration).
    NumericalFailure,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Converged => f.write_str("converged"),
            RunStatus::Completed => f.write_str("completed"),
            RunStatus::IterationBoundReached => f.write_str("iteration-bound-reached"),
            RunStatus::IntegrationFailed { .. } => f.write_str("integration-failed"),
            RunStatus::NumericalFailure => f.write_str("numerical-failure"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Undetermined,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Undetermined => "undetermined",
        })
    }
}

/// Residual norm of a consistency check taken when a Ψtc phase is entered
/// or resumed after a jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyCheck {
    pub t: f64,
    pub kind: ModelKind,
    pub worst: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub plan: RunPlan,
    pub status: RunStatus,
    /// Accepted steps and Ψtc iterates, in order.
    pub trajectory: Vec<SystemState>,
    pub final_state: SystemState,
    /// `norm(F)` at the final state, for the model the run ended on.
    pub final_fnorm: f64,
    pub counters: Counters,
    pub ptc_trace: Option<PtcTrace>,
    pub events: Vec<EventLogEntry>,
    /// Time at which the QSS integration failed and Ψtc took over.
    pub fallback_time: Option<f64>,
    pub consistency: Vec<ConsistencyCheck>,
    pub message: Option<String>,
}

impl RunResult {
    pub fn failure_time(&self) -> Option<f64> {
        match self.status {
            RunStatus::IntegrationFailed { t } => Some(t),
            _ => None,
        }
    }

    pub fn ptc_iterations(&self) -> usize {
        self.ptc_trace.as_ref().map_or(0, |t| t.iterations())
    }

    /// Stability classification. A completed time integration counts as
    /// stable only if it ended at rest (`norm(F) <= rest_tol`).
    pub fn verdict(&self, rest_tol: f64) -> Verdict {
        match self.status {
            RunStatus::Converged => Verdict::Stable,
            RunStatus::Completed if self.final_fnorm <= rest_tol => Verdict::Stable,
            RunStatus::Completed => Verdict::Undetermined,
            RunStatus::IterationBoundReached | RunStatus::IntegrationFailed { .. } => Verdict::Unstable,
            RunStatus::NumericalFailure => Verdict::Undetermined,
        }
    }

    /// Event log entries that changed `z_d`.
    pub fn jumps(&self) -> impl Iterator<Item = &EventLogEntry> {
        self.events.iter().filter(|e| !e.saturated)
    }
}

struct StepEvents<'a> {
    monitor: &'a mut EventMonitor,
}

impl StepHook for StepEvents<'_> {
    fn at_boundary(&mut self, _: &DaeProblem, state: &SystemState, dt: f64) -> Result<Option<SystemState>> {
        self.monitor.advance(state, dt);
        Ok(self.monitor.fire(state))
    }
}

/// One trapezoidal step of `delta0` from a jumped state, retried once with
/// `delta0 / 10`.
pub fn restart_step(
    prob: &DaeProblem,
    s: &SystemState,
    delta0: f64,
    trap: &TrapConfig,
    counters: &mut Counters,
) -> Result<(SystemState, f64)> {
    match trap_step(prob, s, delta0, trap, counters) {
        Ok(next) => Ok((next, delta0)),
        Err(_) => {
            let h = delta0 / 10.0;
            trap_step(prob, s, h, trap, counters).map(|next| (next, h))
        }
    }
}

struct PtcEvents<'a> {
    monitor: &'a mut EventMonitor,
    trap: TrapConfig,
    delta0: f64,
    counters: Counters,
    trajectory: &'a mut Vec<SystemState>,
    consistency: &'a mut Vec<ConsistencyCheck>,
}

impl PtcHook for PtcEvents<'_> {
    fn on_iterate(&mut self, prob: &DaeProblem, state: &SystemState, dt: f64) -> Result<HookAction> {
        if dt > 0.0 {
            self.trajectory.push(state.clone());
        }
        self.monitor.advance(state, dt);
        let Some(jumped) = self.monitor.fire(state) else {
            return Ok(if self.monitor.armed(state) {
                HookAction::Hold
            } else {
                HookAction::Continue
            });
        };
        let (next, h) = restart_step(prob, &jumped, self.delta0, &self.trap, &mut self.counters)?;
        self.monitor.advance(&next, h);
        self.consistency.push(consistency_of(prob, &next)?);
        self.trajectory.push(next.clone());
        Ok(HookAction::Restart(next))
    }

    fn take_counters(&mut self) -> Counters {
        std::mem::take(&mut self.counters)
    }
}

fn consistency_of(prob: &DaeProblem, s: &SystemState) -> Result<ConsistencyCheck> {
    let report = prob.check_consistency(s, f64::INFINITY)?;
    Ok(ConsistencyCheck {
        t: s.t,
        kind: prob.kind,
        worst: report.worst(),
    })
}

/// Accumulates the pieces of a multi-phase run.
struct Run {
    plan: RunPlan,
    monitor: EventMonitor,
    trajectory: Vec<SystemState>,
    counters: Counters,
    consistency: Vec<ConsistencyCheck>,
    fallback_time: Option<f64>,
}

impl Run {
    fn new(sys: &HybridSystem, plan: &RunPlan) -> Self {
        Run {
            plan: plan.clone(),
            monitor: EventMonitor::new(sys.rules.clone()),
            trajectory: vec![sys.initial.clone()],
            counters: Counters::default(),
            consistency: Vec::new(),
            fallback_time: None,
        }
    }

    /// Trapezoidal phase from `s` to `t_end`. On success returns the state
    /// to continue from; on failure the state the failing step started
    /// from, and the error.
    fn integrate(&mut self, prob: &DaeProblem, s: &SystemState, t_end: f64) -> std::result::Result<SystemState, (SystemState, f64, Error)> {
        let mut hook = StepEvents {
            monitor: &mut self.monitor,
        };
        let run = trap_integrate(prob, s, t_end, &self.plan.trap, &mut hook);
        self.counters += run.counters;
        self.trajectory.extend(run.trajectory.into_iter().skip(1));
        match run.outcome {
            TrapOutcome::Completed => Ok(run.final_state),
            TrapOutcome::Failed { t, error } => Err((run.final_state, t, error)),
        }
    }

    /// Ψtc phase from `s` with event handling. A start state that is not
    /// consistent for `prob` is first repaired with a restart step.
    fn ptc(&mut self, prob: &DaeProblem, s: &SystemState) -> RunResult {
        let cfg = self.plan.ptc.clone();
        let mut start = s.clone();
        let entry = match consistency_of(prob, &start) {
            Ok(c) => c,
            Err(e) => return self.finish_error(prob, start, e),
        };
        if entry.worst > ENTRY_TOL {
            match restart_step(prob, &start, cfg.delta0, &self.plan.trap, &mut self.counters) {
                Ok((next, h)) => {
                    self.monitor.advance(&next, h);
                    self.trajectory.push(next.clone());
                    start = next;
                }
                Err(e) => return self.finish_error(prob, start, e),
            }
            match consistency_of(prob, &start) {
                Ok(c) => self.consistency.push(c),
                Err(e) => return self.finish_error(prob, start, e),
            }
        } else {
            self.consistency.push(entry);
        }

        let mut trajectory = Vec::new();
        let mut consistency = Vec::new();
        let outcome = {
            let mut hook = PtcEvents {
                monitor: &mut self.monitor,
                trap: self.plan.trap.clone(),
                delta0: cfg.delta0,
                counters: Counters::default(),
                trajectory: &mut trajectory,
                consistency: &mut consistency,
            };
            ptc_solve(prob, &start, &cfg, &mut hook)
        };
        self.trajectory.extend(trajectory);
        self.consistency.extend(consistency);
        if self.trajectory.last() != Some(&outcome.final_state) {
            self.trajectory.push(outcome.final_state.clone());
        }
        self.counters += outcome.trace.counters;
        let status = match outcome.status {
            PtcStatus::Converged => RunStatus::Converged,
            PtcStatus::IterationBoundReached => RunStatus::IterationBoundReached,
            _ => RunStatus::NumericalFailure,
        };
        let final_fnorm = outcome.final_fnorm;
        self.finish(status, outcome.final_state, final_fnorm, Some(outcome.trace), outcome.message)
    }

    fn finish(
        &mut self,
        status: RunStatus,
        final_state: SystemState,
        final_fnorm: f64,
        ptc_trace: Option<PtcTrace>,
        message: Option<String>,
    ) -> RunResult {
        RunResult {
            plan: self.plan.clone(),
            status,
            trajectory: std::mem::take(&mut self.trajectory),
            final_state,
            final_fnorm,
            counters: self.counters,
            ptc_trace,
            events: std::mem::take(&mut self.monitor.log),
            fallback_time: self.fallback_time,
            consistency: std::mem::take(&mut self.consistency),
            message,
        }
    }

    fn finish_error(&mut self, prob: &DaeProblem, s: SystemState, e: Error) -> RunResult {
        let fnorm = residual_norm(prob, &s);
        self.finish(RunStatus::NumericalFailure, s, fnorm, None, Some(e.to_string()))
    }

    fn finish_integration(&mut self, prob: &DaeProblem, result: std::result::Result<SystemState, (SystemState, f64, Error)>) -> RunResult {
        match result {
            Ok(s) => {
                let fnorm = residual_norm(prob, &s);
                self.finish(RunStatus::Completed, s, fnorm, None, None)
            }
            Err((s, t, e)) => {
                let fnorm = residual_norm(prob, &s);
                self.finish(RunStatus::IntegrationFailed { t }, s, fnorm, None, Some(e.to_string()))
            }
        }
    }
}

/// Entry states with a worse constraint residual get a restart step first.
const ENTRY_TOL: f64 = 1e-6;

fn residual_norm(prob: &DaeProblem, s: &SystemState) -> f64 {
    prob.eval_residual(s).map_or(f64::NAN, |r| norm(&r))
}

/// Long-term model: trapezoidal run-up to `t0` (covering the contingency),
/// then Ψtc with the long-term mass matrix.
pub fn run_longterm_ptc(sys: &HybridSystem, plan: &RunPlan) -> RunResult {
    let mut run = Run::new(sys, plan);
    let prob = sys.problem.with_kind(ModelKind::LongTerm);
    if let Err(e) = plan.validate() {
        return run.finish_error(&prob, sys.initial.clone(), e);
    }
    match run.integrate(&prob, &sys.initial, plan.t0) {
        Ok(s) => run.ptc(&prob, &s),
        Err(failed) => run.finish_integration(&prob, Err(failed)),
    }
}

/// QSS model: long-term trapezoidal to `t1`, QSS trapezoidal from there, and
/// on a numerical difficulty a permanent switch to Ψtc on the QSS model.
pub fn run_qss_ptc(sys: &HybridSystem, plan: &RunPlan) -> RunResult {
    let mut run = Run::new(sys, plan);
    let long = sys.problem.with_kind(ModelKind::LongTerm);
    let qss = sys.problem.with_kind(ModelKind::Qss);
    if let Err(e) = plan.validate() {
        return run.finish_error(&qss, sys.initial.clone(), e);
    }
    let handoff = match run.integrate(&long, &sys.initial, plan.t1) {
        Ok(s) => s,
        Err(failed) => return run.finish_integration(&long, Err(failed)),
    };
    match run.integrate(&qss, &handoff, plan.t_end) {
        Ok(s) => run.finish_integration(&qss, Ok(s)),
        Err((s, t, _)) => {
            run.fallback_time = Some(t);
            run.ptc(&qss, &s)
        }
    }
}

/// Trapezoidal integration of the selected model to `t_end`. The QSS model
/// is entered at `t1` after a long-term run-up.
pub fn run_baseline(sys: &HybridSystem, plan: &RunPlan) -> RunResult {
    let mut run = Run::new(sys, plan);
    let long = sys.problem.with_kind(ModelKind::LongTerm);
    if let Err(e) = plan.validate() {
        return run.finish_error(&long, sys.initial.clone(), e);
    }
    match plan.model_kind {
        ModelKind::LongTerm => {
            let result = run.integrate(&long, &sys.initial, plan.t_end);
            run.finish_integration(&long, result)
        }
        ModelKind::Qss => {
            let qss = sys.problem.with_kind(ModelKind::Qss);
            let handoff = match run.integrate(&long, &sys.initial, plan.t1) {
                Ok(s) => s,
                Err(failed) => return run.finish_integration(&long, Err(failed)),
            };
            let result = run.integrate(&qss, &handoff, plan.t_end);
            run.finish_integration(&qss, result)
        }
    }
}

/// Ψtc on the QSS model directly from the `t1` handoff (no trapezoidal QSS
/// phase).
fn run_qss_direct_ptc(sys: &HybridSystem, plan: &RunPlan) -> RunResult {
    let mut run = Run::new(sys, plan);
    let long = sys.problem.with_kind(ModelKind::LongTerm);
    let qss = sys.problem.with_kind(ModelKind::Qss);
    if let Err(e) = plan.validate() {
        return run.finish_error(&qss, sys.initial.clone(), e);
    }
    match run.integrate(&long, &sys.initial, plan.t1) {
        Ok(s) => run.ptc(&qss, &s),
        Err(failed) => run.finish_integration(&long, Err(failed)),
    }
}

/// Dispatches on `plan.method` and `plan.model_kind`.
pub fn run(sys: &HybridSystem, plan: &RunPlan) -> RunResult {
    match (plan.method, plan.model_kind) {
        (Method::Trapezoidal, _) => run_baseline(sys, plan),
        (Method::Ptc, ModelKind::LongTerm) => run_longterm_ptc(sys, plan),
        (Method::Ptc, ModelKind::Qss) => run_qss_direct_ptc(sys, plan),
        (Method::QssTrapWithPtcFallback, _) => run_qss_ptc(sys, plan),
    }
}
