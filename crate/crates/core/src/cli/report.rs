//! Run reports and trajectory CSV.

use std::fmt::Write as _;
use std::time::Duration;

use crate::counters::Counters;
use crate::dae::ModelKind;
use crate::hybrid::{EventLogEntry, Method, RunResult, RunStatus, Verdict};

/// Norm of `F` below which a completed integration counts as at rest.
pub const REST_TOL: f64 = 1e-6;

/// What a run did, in a form that prints as `key: value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub model: ModelKind,
    pub method: Method,
    pub status: RunStatus,
    pub verdict: Verdict,
    pub wall_time: Duration,
    pub counters: Counters,
    pub ptc_iterations: usize,
    pub final_fnorm: f64,
    pub final_t: f64,
    pub failure_time: Option<f64>,
    pub fallback_time: Option<f64>,
    pub events: Vec<EventLogEntry>,
    pub message: Option<String>,
}

impl RunReport {
    pub fn new(scenario: &str, result: &RunResult, wall_time: Duration) -> Self {
        RunReport {
            scenario: scenario.to_string(),
            model: result.plan.model_kind,
            method: result.plan.method,
            status: result.status.clone(),
            verdict: result.verdict(REST_TOL),
            wall_time,
            counters: result.counters,
            ptc_iterations: result.ptc_iterations(),
            final_fnorm: result.final_fnorm,
            final_t: result.final_state.t,
            failure_time: result.failure_time(),
            fallback_time: result.fallback_time,
            events: result.events.clone(),
            message: result.message.clone(),
        }
    }

    /// Process exit code: 0 converged or completed, 2 instability detected,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Converged | RunStatus::Completed => 0,
            RunStatus::IterationBoundReached | RunStatus::IntegrationFailed { .. } => 2,
            RunStatus::NumericalFailure => 3,
        }
    }

    /// The report as `key: value` lines, each key prefixed with `prefix`.
    pub fn to_text_prefixed(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{prefix}{k}: {v}");
        };
        kv("scenario", self.scenario.clone());
        kv("model", self.model.to_string());
        kv("method", self.method.to_string());
        kv("status", self.status.to_string());
        kv("verdict", self.verdict.to_string());
        kv("exit_code", self.exit_code().to_string());
        kv("wall_time_s", format!("{:.6}", self.wall_time.as_secs_f64()));
        kv("steps", self.counters.steps.to_string());
        kv("ptc_iterations", self.ptc_iterations.to_string());
        kv("linear_solves", self.counters.linear_solves.to_string());
        kv("jacobian_evals", self.counters.jacobian_evals.to_string());
        kv("residual_evals", self.counters.residual_evals.to_string());
        kv("final_fnorm", format!("{:e}", self.final_fnorm));
        kv("final_t", format!("{:?}", self.final_t));
        if let Some(t) = self.failure_time {
            kv("failure_time", format!("{t:?}"));
        }
        if let Some(t) = self.fallback_time {
            kv("fallback_time", format!("{t:?}"));
        }
        kv("events", self.events.len().to_string());
        for e in &self.events {
            let sat = if e.saturated { " saturated" } else { "" };
            kv("event", format!("t={:?} device={} {:?} -> {:?}{sat}", e.t, e.device, e.old, e.new));
        }
        if let Some(m) = &self.message {
            kv("message", m.clone());
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_text_prefixed("")
    }
}

/// Side-by-side report of a baseline run and a Ψtc run of one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub baseline: RunReport,
    pub ptc: RunReport,
}

impl CompareReport {
    /// Baseline linear solves per Ψtc linear solve.
    pub fn speedup(&self) -> f64 {
        self.baseline.counters.linear_solves as f64 / self.ptc.counters.linear_solves as f64
    }

    pub fn verdicts_agree(&self) -> bool {
        self.baseline.verdict == self.ptc.verdict
    }

    pub fn to_text(&self) -> String {
        let mut out = self.baseline.to_text_prefixed("baseline.");
        out.push_str(&self.ptc.to_text_prefixed("ptc."));
        let _ = writeln!(
            out,
            "speedup: {:.6} ({} / {} linear solves)",
            self.speedup(),
            self.baseline.counters.linear_solves,
            self.ptc.counters.linear_solves
        );
        let _ = writeln!(out, "verdicts_agree: {}", self.verdicts_agree());
        out
    }
}

/// Trajectory as CSV: a `t` column, then one column per entry of
/// `[z_c | x | y]` named by `names`. Floats use their shortest round-trip
/// form, so the bytes depend only on the computed values.
pub fn trajectory_csv(names: &[String], result: &RunResult) -> String {
    let mut out = String::from("t");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for s in &result.trajectory {
        let _ = write!(out, "{:?}", s.t);
        for v in s.zc.iter().chain(s.x.iter()).chain(s.y.iter()) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}
