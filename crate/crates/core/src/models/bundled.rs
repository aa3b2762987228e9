//! The three bundled desk-scale scenarios.
//!
//! All share one five-bus layout: an infinite bus `INF` feeds the
//! transmission hub `T1` through two parallel lines; a generator at `G1`
//! is attached to the hub; a second corridor leads to `T2`, where an LTC
//! supplies the distribution bus `D1` with a recovering load. The
//! contingency trips one of the two parallel lines at `t = 1 s`.

use super::scenario::*;
use super::TAP_STEP;

fn bus(id: &str, kind: BusKind) -> Bus {
    Bus {
        id: id.into(),
        kind,
        g: 0.0,
        b: 0.0,
    }
}

fn line(id: &str, from: &str, to: &str, x: f64) -> Line {
    Line {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        r: x / 10.0,
        x,
        b: 0.0,
    }
}

/// Knobs that distinguish the bundled scenarios.
struct Knobs {
    name: &'static str,
    archetype: Archetype,
    x_parallel: f64,
    p_gen: f64,
    load_p: f64,
    load_q: f64,
    local_p: f64,
    local_q: f64,
    tp: f64,
    i_lim: f64,
    efd_max: f64,
    ltc_delay: f64,
    ltc_max: f64,
    /// Set close to the pre-contingency voltage at `D1`, so the LTC only
    /// acts after the line trip.
    ltc_v_ref: f64,
    shunt_b: f64,
    t_end: f64,
}

fn assemble(k: Knobs) -> Scenario {
    let mut buses = vec![
        bus("INF", BusKind::Infinite { v: 1.0, angle: 0.0 }),
        bus("T1", BusKind::Pq),
        bus("G1", BusKind::Pq),
        bus("T2", BusKind::Pq),
        bus("D1", BusKind::Pq),
    ];
    buses[4].b = k.shunt_b;
    Scenario {
        name: k.name.into(),
        archetype: Some(k.archetype),
        base_mva: 100.0,
        buses,
        lines: vec![
            line("L1", "INF", "T1", k.x_parallel),
            line("L2", "INF", "T1", k.x_parallel),
            line("L3", "G1", "T1", 0.05),
            line("L4", "T1", "T2", 0.06),
        ],
        generators: vec![Generator {
            id: "G".into(),
            bus: "G1".into(),
            p: k.p_gen,
            v_set: 1.02,
            h: 4.0,
            d: 2.0,
            xd: 1.8,
            xq: 1.7,
            xp: 0.3,
            td0: 6.0,
            tq0: 0.8,
        }],
        exciters: vec![Exciter {
            generator: "G".into(),
            ka: 50.0,
            te: 0.2,
            efd_max: k.efd_max,
            efd_min: 0.0,
        }],
        governors: vec![Governor {
            generator: "G".into(),
            r: 0.05,
            tg: 5.0,
        }],
        loads: vec![
            Load {
                id: "LD".into(),
                bus: "D1".into(),
                p0: k.load_p,
                q0: k.load_q,
                model: LoadModel::Recovery {
                    tp: k.tp,
                    tq: k.tp,
                    alpha_s: 0.0,
                    alpha_t: 2.0,
                    beta_s: 0.0,
                    beta_t: 2.0,
                },
            },
            Load {
                id: "LT".into(),
                bus: "T1".into(),
                p0: k.local_p,
                q0: k.local_q,
                model: LoadModel::Static { alpha: 1.0, beta: 2.0 },
            },
        ],
        ltcs: vec![Ltc {
            id: "LTC".into(),
            from: "T2".into(),
            to: "D1".into(),
            r: 0.0,
            x: 0.08,
            ratio: 1.0,
            step: TAP_STEP,
            ratio_min: 0.9,
            ratio_max: k.ltc_max,
            v_ref: k.ltc_v_ref,
            deadband: 0.01,
            delay: k.ltc_delay,
        }],
        oxls: vec![Oxl {
            generator: "G".into(),
            i_lim: k.i_lim,
            width: 0.02,
            t_r: 100.0,
            threshold: 10.0,
        }],
        shunts: Vec::new(),
        fault: Some(Fault {
            line: "L2".into(),
            t: 1.0,
        }),
        horizon: Horizon {
            t_end: k.t_end,
            t0: 5.0,
            t1: 30.0,
        },
    }
}

/// Archetype I: the post-contingency system settles after a few tap moves
/// and load recovery; the OXL never acts.
pub fn scenario_stable() -> Scenario {
    assemble(Knobs {
        name: "stable",
        archetype: Archetype::StableFast,
        x_parallel: 0.2,
        p_gen: 1.0,
        load_p: 1.5,
        load_q: 0.4,
        local_p: 0.5,
        local_q: 0.2,
        tp: 30.0,
        i_lim: 4.0,
        efd_max: 5.0,
        ltc_delay: 20.0,
        ltc_max: 1.1,
        ltc_v_ref: 0.92,
        shunt_b: 0.3,
        t_end: 600.0,
    })
}

/// Archetype II placeholder: a heavier load behind weaker lines. The
/// intended behaviour is a QSS Newton failure after the `t1` handoff while
/// the long-term model settles; with this data both models settle and the
/// QSS fallback never engages.
pub fn scenario_qss_difficulty() -> Scenario {
    assemble(Knobs {
        name: "qss-difficulty",
        archetype: Archetype::QssDifficulty,
        x_parallel: 0.3,
        p_gen: 1.0,
        load_p: 1.8,
        load_q: 0.5,
        local_p: 0.5,
        local_q: 0.2,
        tp: 20.0,
        i_lim: 6.0,
        efd_max: 5.0,
        ltc_delay: 20.0,
        ltc_max: 1.1,
        ltc_v_ref: 1.0,
        shunt_b: 0.0,
        t_end: 600.0,
    })
}

/// Archetype III: field-current limiting plus load recovery and tap
/// changing drive a long-term voltage collapse.
pub fn scenario_unstable() -> Scenario {
    assemble(Knobs {
        name: "unstable",
        archetype: Archetype::Unstable,
        x_parallel: 0.3,
        p_gen: 1.0,
        load_p: 2.0,
        load_q: 0.6,
        local_p: 0.5,
        local_q: 0.2,
        tp: 30.0,
        i_lim: 3.5,
        efd_max: 5.0,
        ltc_delay: 20.0,
        ltc_max: 1.1,
        ltc_v_ref: 0.91,
        shunt_b: 0.8,
        t_end: 600.0,
    })
}
