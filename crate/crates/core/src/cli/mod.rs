//! Command-line front end: scenario files, run orchestration and output.

pub mod format;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use format::{parse_scenario, parse_scenario_str, write_scenario};
pub use report::{trajectory_csv, CompareReport, RunReport, REST_TOL};

use crate::dae::ModelKind;
use crate::error::{Error, Result};
use crate::hybrid::{run, Method, RunPlan, RunResult};
use crate::models::{build_hybrid, scenario_qss_difficulty, scenario_stable, scenario_unstable, Scenario};

/// Exit code for unreadable or invalid input and bad flags.
pub const EXIT_INPUT: i32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Longterm,
    Qss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Trap,
    Ptc,
    QssFallback,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Scenario file in the plain-text scenario format
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    pub scenario: Option<PathBuf>,
    /// Use a bundled scenario instead of a file
    #[arg(long, value_parser = ["stable", "qss-difficulty", "unstable"])]
    pub bundled: Option<String>,
    /// Model formulation [default: longterm, or qss with --method qss-fallback]
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Solution method (`compare` always runs trap against ptc)
    #[arg(long, value_enum, default_value = "ptc")]
    pub method: MethodArg,
    /// End of the simulated horizon, s [default: the scenario's t_end]
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Handoff from the trapezoidal run-up to Ψtc, s [default: the scenario's t0, normally 5]
    #[arg(long)]
    pub t0: Option<f64>,
    /// Handoff from the long-term to the QSS model, s [default: the scenario's t1, normally 30]
    #[arg(long)]
    pub t1: Option<f64>,
    /// Trapezoidal step, s
    #[arg(long, default_value_t = 0.05)]
    pub h: f64,
    /// Initial and post-event pseudo-time step, s
    #[arg(long, default_value_t = 0.1)]
    pub delta0: f64,
    /// Cap on the pseudo-time step, s
    #[arg(long, default_value_t = 1e4)]
    pub delta_max: f64,
    /// Ψtc stops once the RMS residual norm drops to this
    #[arg(long, default_value_t = 1e-6)]
    pub f_tol: f64,
    /// Bound on Ψtc iterations
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    /// Output directory for the trajectory CSV and report
    #[arg(long, default_value = "ptc-out")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Run the trapezoidal baseline and Ψtc on one scenario and report both
    Compare(RunArgs),
    /// Print a bundled scenario in the scenario file format
    Export {
        #[arg(value_parser = ["stable", "qss-difficulty", "unstable"])]
        name: String,
    },
}

/// Pseudo-transient continuation and trapezoidal simulation of long-term
/// power-system dynamics.
///
/// Exit codes: 0 converged or completed, 1 bad input, 2 instability
/// detected, 3 numerical failure.
#[derive(Clone, Debug, Parser)]
#[command(name = "ptc-sim", version, args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: Option<RunArgs>,
}

pub fn bundled(name: &str) -> Option<Scenario> {
    match name {
        "stable" => Some(scenario_stable()),
        "qss-difficulty" => Some(scenario_qss_difficulty()),
        "unstable" => Some(scenario_unstable()),
        _ => None,
    }
}

impl RunArgs {
    pub fn load_scenario(&self) -> Result<Scenario> {
        match (&self.scenario, &self.bundled) {
            (Some(path), _) => parse_scenario(path),
            (None, Some(name)) => bundled(name).ok_or_else(|| Error::InvalidConfig(format!("no bundled scenario `{name}`"))),
            (None, None) => Err(Error::InvalidConfig("need --scenario or --bundled".into())),
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        match (self.model, self.method) {
            (Some(ModelArg::Longterm), _) => ModelKind::LongTerm,
            (Some(ModelArg::Qss), _) | (None, MethodArg::QssFallback) => ModelKind::Qss,
            (None, _) => ModelKind::LongTerm,
        }
    }

    /// The run plan for `method`, with horizon defaults from `sc`.
    pub fn plan(&self, sc: &Scenario, method: Method) -> RunPlan {
        let mut plan = RunPlan::new(self.model_kind(), method, self.t_end.unwrap_or(sc.horizon.t_end));
        plan.t0 = self.t0.unwrap_or(sc.horizon.t0);
        plan.t1 = self.t1.unwrap_or(sc.horizon.t1);
        plan.trap.h = self.h;
        plan.ptc.delta0 = self.delta0;
        plan.ptc.delta_max = self.delta_max;
        plan.ptc.f_tol = self.f_tol;
        plan.ptc.max_iters = self.max_iters;
        plan
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodArg::Trap => Method::Trapezoidal,
            MethodArg::Ptc => Method::Ptc,
            MethodArg::QssFallback => Method::QssTrapWithPtcFallback,
        }
    }
}

/// A finished run with its report and CSV text.
#[derive(Clone, Debug)]
pub struct Executed {
    pub result: RunResult,
    pub report: RunReport,
    pub csv: String,
}

/// Builds `sc` and runs `plan` on it.
pub fn execute(sc: &Scenario, plan: &RunPlan) -> Result<Executed> {
    plan.validate()?;
    let sys = build_hybrid(sc, plan.model_kind)?;
    let names = sys.problem.model.variable_names();
    let start = Instant::now();
    let result = run(&sys, plan);
    let report = RunReport::new(&sc.name, &result, start.elapsed());
    let csv = trajectory_csv(&names, &result);
    Ok(Executed { result, report, csv })
}

/// Runs the trapezoidal baseline and Ψtc side by side on two threads.
pub fn execute_compare(sc: &Scenario, baseline: &RunPlan, ptc: &RunPlan) -> Result<(Executed, Executed)> {
    let (a, b) = std::thread::scope(|s| {
        let a = s.spawn(|| execute(sc, baseline));
        let b = s.spawn(|| execute(sc, ptc));
        (a.join(), b.join())
    });
    let join = |r: std::thread::Result<Result<Executed>>| r.unwrap_or_else(|_| Err(Error::InvalidConfig("run panicked".into())));
    Ok((join(a)?, join(b)?))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Runs one scenario, writes `trajectory.csv` and `report.txt` into
/// `args.out`, and returns the report text and exit code.
pub fn run_command(args: &RunArgs) -> Result<(String, i32)> {
    let sc = args.load_scenario()?;
    let plan = args.plan(&sc, args.method());
    let done = execute(&sc, &plan)?;
    let text = done.report.to_text();
    create_dir(&args.out)?;
    write_file(&args.out, "trajectory.csv", &done.csv)?;
    write_file(&args.out, "report.txt", &text)?;
    Ok((text, done.report.exit_code()))
}

/// Runs the baseline and Ψtc, writes `baseline.csv`, `ptc.csv` and
/// `compare.txt` into `args.out`. The exit code is the Ψtc run's.
pub fn compare_command(args: &RunArgs) -> Result<(String, i32)> {
    let sc = args.load_scenario()?;
    let baseline = args.plan(&sc, Method::Trapezoidal);
    let ptc_method = match args.model_kind() {
        ModelKind::LongTerm => Method::Ptc,
        ModelKind::Qss => Method::QssTrapWithPtcFallback,
    };
    let ptc = args.plan(&sc, ptc_method);
    let (a, b) = execute_compare(&sc, &baseline, &ptc)?;
    let report = CompareReport {
        baseline: a.report,
        ptc: b.report,
    };
    let text = report.to_text();
    create_dir(&args.out)?;
    write_file(&args.out, "baseline.csv", &a.csv)?;
    write_file(&args.out, "ptc.csv", &b.csv)?;
    write_file(&args.out, "compare.txt", &text)?;
    Ok((text, report.ptc.exit_code()))
}

/// Dispatches a parsed command line; returns what to print and the exit
/// code.
pub fn main_with(cli: &Cli) -> (String, i32) {
    let outcome = match (&cli.command, &cli.run) {
        (Some(Command::Compare(args)), _) => compare_command(args),
        (Some(Command::Export { name }), _) => match bundled(name) {
            Some(sc) => Ok((write_scenario(&sc), 0)),
            None => Err(Error::InvalidConfig(format!("no bundled scenario `{name}`"))),
        },
        (None, Some(args)) => run_command(args),
        (None, None) => Err(Error::InvalidConfig("need --scenario or --bundled (see --help)".into())),
    };
    match outcome {
        Ok(done) => done,
        Err(e) => (format!("error: {e}\n"), EXIT_INPUT),
    }
}
