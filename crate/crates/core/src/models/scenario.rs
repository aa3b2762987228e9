//! Scenario data: network, devices, contingency and run horizon.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which behavior a bundled scenario is designed to exhibit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Archetype {
    StableFast,
    QssDifficulty,
    Unstable,
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Archetype::StableFast => "stable-fast",
            Archetype::QssDifficulty => "qss-difficulty",
            Archetype::Unstable => "unstable",
        })
    }
}

impl FromStr for Archetype {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stable-fast" => Ok(Archetype::StableFast),
            "qss-difficulty" => Ok(Archetype::QssDifficulty),
            "unstable" => Ok(Archetype::Unstable),
            _ => Err(format!("unknown archetype `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BusKind {
    /// Fixed voltage phasor; absorbs any mismatch.
    Infinite { v: f64, angle: f64 },
    /// Voltage and angle are algebraic unknowns.
    Pq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Shunt admittance `g + jb`, per unit.
    pub g: f64,
    pub b: f64,
}

/// A π-model line.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    /// Total charging susceptance.
    pub b: f64,
}

/// Two-axis machine with `x'_d = x'_q = xp`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    /// Scheduled active power and terminal voltage for the initial power flow.
    pub p: f64,
    pub v_set: f64,
    /// Inertia constant, seconds.
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xp: f64,
    pub td0: f64,
    pub tq0: f64,
}

/// First-order AVR with a field-voltage limit.
#[derive(Clone, Debug, PartialEq)]
pub struct Exciter {
    pub generator: String,
    pub ka: f64,
    pub te: f64,
    pub efd_max: f64,
    pub efd_min: f64,
}

/// First-order governor with droop `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Governor {
    pub generator: String,
    pub r: f64,
    pub tg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadModel {
    /// `P = P0 (V/V0)^alpha`, `Q = Q0 (V/V0)^beta`.
    Static { alpha: f64, beta: f64 },
    /// Exponential recovery with steady exponents `*_s` and transient
    /// exponents `*_t`.
    Recovery {
        tp: f64,
        tq: f64,
        alpha_s: f64,
        alpha_t: f64,
        beta_s: f64,
        beta_t: f64,
    },
}

/// `p0`, `q0` are the consumption at the initial operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub p0: f64,
    pub q0: f64,
    pub model: LoadModel,
}

/// Transformer with an off-nominal ratio on the `from` side. The ratio
/// multiplies the `to`-side voltage, so raising it raises the controlled
/// (`to`) voltage.
#[derive(Clone, Debug, PartialEq)]
pub struct Ltc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    pub ratio: f64,
    pub step: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub v_ref: f64,
    pub deadband: f64,
    pub delay: f64,
}

/// Over-excitation limiter. Its timer integrates a smooth indicator of
/// `i_fd > i_lim`; when it reaches `threshold` the field voltage is capped
/// at `i_lim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Oxl {
    pub generator: String,
    pub i_lim: f64,
    pub width: f64,
    pub t_r: f64,
    pub threshold: f64,
}

/// Voltage-controlled shunt capacitor. It switches in after the bus
/// voltage stays below `v_on` for `delay` and out after it stays above
/// `v_off` for `delay`; it starts out of service.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedShunt {
    pub id: String,
    pub bus: String,
    pub b: f64,
    pub v_on: f64,
    pub v_off: f64,
    pub delay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    /// Id of the line that is tripped.
    pub line: String,
    pub t: f64,
}

/// Default run horizon bundled with a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Horizon {
    pub t_end: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon {
            t_end: 300.0,
            t0: 5.0,
            t1: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub archetype: Option<Archetype>,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub exciters: Vec<Exciter>,
    pub governors: Vec<Governor>,
    pub loads: Vec<Load>,
    pub ltcs: Vec<Ltc>,
    pub oxls: Vec<Oxl>,
    pub shunts: Vec<SwitchedShunt>,
    pub fault: Option<Fault>,
    pub horizon: Horizon,
}

impl Scenario {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    /// Checks the structural invariants; the error names the one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.buses.is_empty() {
            return fail("at least one bus".into());
        }
        if !self.buses.iter().any(|b| matches!(b.kind, BusKind::Infinite { .. })) {
            return fail("at least one infinite bus".into());
        }
        unique(self.buses.iter().map(|b| b.id.as_str()), "bus")?;
        unique(self.lines.iter().map(|l| l.id.as_str()).chain(self.ltcs.iter().map(|t| t.id.as_str())), "branch")?;
        unique(self.generators.iter().map(|g| g.id.as_str()), "generator")?;
        unique(self.generators.iter().map(|g| g.bus.as_str()), "generator bus")?;
        unique(self.loads.iter().map(|l| l.id.as_str()), "load")?;
        unique(self.exciters.iter().map(|e| e.generator.as_str()), "exciter generator")?;
        unique(self.governors.iter().map(|e| e.generator.as_str()), "governor generator")?;
        unique(self.oxls.iter().map(|e| e.generator.as_str()), "oxl generator")?;
        unique(self.shunts.iter().map(|s| s.id.as_str()), "shunt")?;

        let bus = |id: &str, what: &str| -> Result<()> {
            match self.bus_index(id) {
                Some(_) => Ok(()),
                None => Err(Error::Validation(format!("{what} refers to unknown bus `{id}`"))),
            }
        };
        let generator = |id: &str, what: &str| -> Result<()> {
            match self.generator_index(id) {
                Some(_) => Ok(()),
                None => Err(Error::Validation(format!("{what} refers to unknown generator `{id}`"))),
            }
        };
        for l in &self.lines {
            bus(&l.from, &l.id)?;
            bus(&l.to, &l.id)?;
            positive(l.r * l.r + l.x * l.x, &format!("line {} impedance != 0", l.id))?;
        }
        for g in &self.generators {
            bus(&g.bus, &g.id)?;
            if matches!(self.buses[self.bus_index(&g.bus).unwrap()].kind, BusKind::Infinite { .. }) {
                return fail(format!("generator {} sits on an infinite bus", g.id));
            }
            positive(g.h, "inertia h > 0")?;
            positive(g.xp, "xp > 0")?;
            positive(g.td0, "time constant td0 > 0")?;
            positive(g.tq0, "time constant tq0 > 0")?;
            positive(g.v_set, "v_set > 0")?;
            if g.xd < g.xp || g.xq < g.xp {
                return fail(format!("generator {}: xd >= xp and xq >= xp", g.id));
            }
        }
        for e in &self.exciters {
            generator(&e.generator, "exciter")?;
            positive(e.ka, "exciter gain ka > 0")?;
            positive(e.te, "time constant te > 0")?;
            if e.efd_min >= e.efd_max {
                return fail("exciter efd_min < efd_max".into());
            }
        }
        for gv in &self.governors {
            generator(&gv.generator, "governor")?;
            positive(gv.r, "droop r > 0")?;
            positive(gv.tg, "time constant tg > 0")?;
        }
        for l in &self.loads {
            bus(&l.bus, &l.id)?;
            if let LoadModel::Recovery { tp, tq, .. } = l.model {
                positive(tp, "time constant tp > 0")?;
                positive(tq, "time constant tq > 0")?;
            }
        }
        for t in &self.ltcs {
            bus(&t.from, &t.id)?;
            bus(&t.to, &t.id)?;
            positive(t.step, "tap step > 0")?;
            positive(t.deadband, "deadband > 0")?;
            positive(t.r * t.r + t.x * t.x, &format!("ltc {} impedance != 0", t.id))?;
            if t.delay < 0.0 {
                return fail("ltc delay >= 0".into());
            }
            if !(t.ratio_min <= t.ratio && t.ratio <= t.ratio_max) {
                return fail(format!("ltc {}: ratio_min <= ratio <= ratio_max", t.id));
            }
        }
        for o in &self.oxls {
            generator(&o.generator, "oxl")?;
            positive(o.width, "oxl width > 0")?;
            positive(o.t_r, "time constant t_r > 0")?;
            positive(o.threshold, "oxl threshold > 0")?;
        }
        for sh in &self.shunts {
            bus(&sh.bus, &sh.id)?;
            if matches!(self.buses[self.bus_index(&sh.bus).unwrap()].kind, BusKind::Infinite { .. }) {
                return fail(format!("shunt {} sits on an infinite bus", sh.id));
            }
            positive(sh.b, "shunt susceptance b > 0")?;
            if !(sh.v_on < sh.v_off) {
                return fail(format!("shunt {}: v_on < v_off", sh.id));
            }
            if sh.delay < 0.0 {
                return fail("shunt delay >= 0".into());
            }
        }
        if let Some(f) = &self.fault {
            if !self.lines.iter().any(|l| l.id == f.line) {
                return fail(format!("fault line `{}` exists", f.line));
            }
            if f.t < 0.0 || f.t >= self.horizon.t0 {
                return fail("0 <= t_fault < t0".into());
            }
        }
        let h = &self.horizon;
        if !(0.0 <= h.t0 && h.t0 <= h.t1 && h.t1 <= h.t_end) {
            return fail("0 <= t0 <= t1 <= t_end".into());
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        let edges = self
            .lines
            .iter()
            .map(|l| (&l.from, &l.to))
            .chain(self.ltcs.iter().map(|t| (&t.from, &t.to)));
        for (a, b) in edges {
            let (a, b) = (self.bus_index(a).unwrap(), self.bus_index(b).unwrap());
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            None => Ok(()),
            Some(i) => Err(Error::Validation(format!(
                "network connected (bus `{}` is isolated)",
                self.buses[i].id
            ))),
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(what.to_string()))
    }
}

fn unique<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("{what} ids unique (`{id}` repeated)")));
        }
    }
    Ok(())
}
