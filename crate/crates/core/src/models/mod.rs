//! Power-system model pack: components, network, initialization and the
//! bundled scenarios.
//!
//! Component equations (per unit, time in seconds):
//!
//! * two-axis machine with `x'_d = x'_q = x'`:
//!   `δ' = ω_s (ω − 1)`, `2H ω' = P_m − P_e − D (ω − 1)`,
//!   `T'_d0 e'_q' = E_fd − e'_q − (x_d − x') i_d`,
//!   `T'_q0 e'_d' = −e'_d + (x_q − x') i_q`;
//! * first-order AVR `T_e E_fd' = lim(K_a (V_ref − V)) − E_fd`, where `lim`
//!   is a smooth clamp to `[E_min, E_max]` and the upper limit drops to the
//!   OXL current limit once the OXL flag is set;
//! * governor `T_g P_m' = P_ref − (ω − 1)/R − P_m`;
//! * exponential recovery load `z_p' = −z_p/T_p + P_0 (V/V_0)^α_s − P_0 (V/V_0)^α_t`
//!   consuming `z_p/T_p + P_0 (V/V_0)^α_t` (same for `Q`);
//! * static load `P_0 (V/V_0)^α`, `Q_0 (V/V_0)^β`;
//! * OXL timer `z_o' = σ((i_fd − I_lim)/w) − z_o/T_r` with
//!   `i_fd = e'_q + (x_d − x') i_d`; the flag latches when `z_o` reaches its
//!   threshold;
//! * LTC branch admittance `[[n² y, −n y], [−n y, y]]`, ratio `n` in `z_d`.

pub mod ad;
mod bundled;
pub mod scenario;
pub mod system;

use std::sync::Arc;

pub use bundled::{scenario_qss_difficulty, scenario_stable, scenario_unstable};
pub use scenario::{
    Archetype, Bus, BusKind, Exciter, Fault, Generator, Governor, Horizon, Line, Load, LoadModel, Ltc, Oxl,
    Scenario, SwitchedShunt,
};
pub use system::{power_flow, Layout, PowerFlow, PowerSystem};

use crate::dae::{DaeProblem, ModelKind, SystemState};
use crate::error::Result;
use crate::hybrid::{EventRule, Guard, HybridSystem};

/// The tap step used by the bundled LTCs.
pub const TAP_STEP: f64 = 0.0125;

/// A compiled scenario.
#[derive(Clone, Debug)]
pub struct Built {
    pub problem: DaeProblem,
    pub initial: SystemState,
    pub system: Arc<PowerSystem>,
}

/// Stacks the scenario's equations into a [`DaeProblem`] and returns the
/// pre-contingency equilibrium as the initial state.
pub fn build_problem(sc: &Scenario, kind: ModelKind) -> Result<Built> {
    let c = system::compile(sc)?;
    let initial = SystemState::new(0.0, c.zc, c.zd, c.x, c.y);
    let system = Arc::new(c.system);
    Ok(Built {
        problem: DaeProblem::new(system.clone(), kind),
        initial,
        system,
    })
}

/// LTC rule: voltage at `p[v_index]` outside the deadband around `v_ref`
/// for `delay` moves the ratio one step towards the band.
pub fn ltc_rule(ltc: &Ltc, zd_index: usize, v_index: usize) -> EventRule {
    EventRule {
        device: ltc.id.clone(),
        zd_index,
        guard: Guard::Deadband {
            v_index,
            v_ref: ltc.v_ref,
            deadband: ltc.deadband,
            delay: ltc.delay,
            step: ltc.step,
            min: ltc.ratio_min,
            max: ltc.ratio_max,
        },
    }
}

/// OXL rule: the timer state reaching its threshold sets the flag.
pub fn oxl_rule(oxl: &Oxl, zd_index: usize, timer_index: usize) -> EventRule {
    EventRule {
        device: format!("{}.oxl", oxl.generator),
        zd_index,
        guard: Guard::Threshold {
            index: timer_index,
            threshold: oxl.threshold,
            from: 0.0,
            to: 1.0,
        },
    }
}

/// Switched-shunt rule: voltage below `v_on` (above `v_off`) for `delay`
/// switches the susceptance in (out).
pub fn shunt_rule(sh: &SwitchedShunt, zd_index: usize, v_index: usize) -> EventRule {
    EventRule {
        device: sh.id.clone(),
        zd_index,
        guard: Guard::Deadband {
            v_index,
            v_ref: 0.5 * (sh.v_on + sh.v_off),
            deadband: 0.5 * (sh.v_off - sh.v_on),
            delay: sh.delay,
            step: sh.b,
            min: 0.0,
            max: sh.b,
        },
    }
}

/// Contingency rule: the line is switched out at `fault.t`.
pub fn fault_rule(fault: &Fault, zd_index: usize) -> EventRule {
    EventRule {
        device: fault.line.clone(),
        zd_index,
        guard: Guard::Scheduled { at: fault.t, value: 0.0 },
    }
}

/// Compiles `sc` together with its discrete rules.
pub fn build_hybrid(sc: &Scenario, kind: ModelKind) -> Result<HybridSystem> {
    let built = build_problem(sc, kind)?;
    let layout = &built.system.layout;
    let mut rules = Vec::new();
    if let Some(f) = &sc.fault {
        let li = sc.lines.iter().position(|l| l.id == f.line).expect("validated");
        rules.push(fault_rule(f, layout.line_status[li]));
    }
    for (k, t) in sc.ltcs.iter().enumerate() {
        let bus = sc.bus_index(&t.to).expect("validated");
        if let Some(v_index) = layout.bus_v[bus] {
            rules.push(ltc_rule(t, layout.ltc_ratio[k], v_index));
        }
    }
    for (k, sh) in sc.shunts.iter().enumerate() {
        let bus = sc.bus_index(&sh.bus).expect("validated");
        let v_index = layout.bus_v[bus].expect("validated: not an infinite bus");
        rules.push(shunt_rule(sh, layout.shunt_b[k], v_index));
    }
    for (gen, timer, flag) in &layout.oxl {
        let o = sc.oxls.iter().find(|o| &o.generator == gen).expect("compiled from sc");
        rules.push(oxl_rule(o, *flag, *timer));
    }
    Ok(HybridSystem {
        problem: built.problem,
        initial: built.initial,
        rules,
    })
}
