//! Plain-text scenario format.
//!
//! A file is a sequence of sections. A section starts with a `[name]`
//! header; each following non-blank line is one record made of
//! whitespace-separated `key=value` tokens. `#` starts a comment.
//!
//! ```text
//! [plan]
//! name=demo archetype=stable-fast base_mva=100.0 t_end=600.0 t0=5.0 t1=30.0
//!
//! [buses]
//! id=INF kind=infinite v=1.0 angle=0.0 g=0.0 b=0.0
//! id=B1 kind=pq g=0.0 b=0.0
//!
//! [lines]
//! id=L1 from=INF to=B1 r=0.01 x=0.1 b=0.0
//!
//! [loads]
//! id=LD bus=B1 p0=0.5 q0=0.1 model=static alpha=1.0 beta=2.0
//! ```
//!
//! Sections: `plan`, `buses`, `lines`, `generators`, `exciters`,
//! `governors`, `loads`, `ltcs`, `oxls`, `shunts`, `fault`. Every key of a
//! record is required unless noted below; unknown and repeated keys are
//! rejected. Optional keys: `archetype`, `t0` (default 5) and `t1`
//! (default 30) in `plan`. `plan` and `fault` hold at most one record.
//!
//! Record keys per section:
//!
//! | section | keys |
//! |---|---|
//! | `plan` | `name archetype base_mva t_end t0 t1` |
//! | `buses` | `id kind g b`, plus `v angle` when `kind=infinite` |
//! | `lines` | `id from to r x b` |
//! | `generators` | `id bus p v_set h d xd xq xp td0 tq0` |
//! | `exciters` | `generator ka te efd_max efd_min` |
//! | `governors` | `generator r tg` |
//! | `loads` | `id bus p0 q0 model`, plus `alpha beta` (`static`) or `tp tq alpha_s alpha_t beta_s beta_t` (`recovery`) |
//! | `ltcs` | `id from to r x ratio step ratio_min ratio_max v_ref deadband delay` |
//! | `oxls` | `generator i_lim width t_r threshold` |
//! | `shunts` | `id bus b v_on v_off delay` |
//! | `fault` | `line t` |
//!
//! [`write_scenario`] prints floats in their shortest round-trip form, so
//! parsing its output gives back an identical [`Scenario`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{
    Archetype, Bus, BusKind, Exciter, Fault, Generator, Governor, Horizon, Line, Load, LoadModel, Ltc, Oxl,
    Scenario, SwitchedShunt,
};

const SECTIONS: [&str; 11] = [
    "plan",
    "buses",
    "lines",
    "generators",
    "exciters",
    "governors",
    "loads",
    "ltcs",
    "oxls",
    "shunts",
    "fault",
];

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// One `key=value` line.
struct Record {
    line: usize,
    fields: Vec<(String, String)>,
    used: Vec<bool>,
}

impl Record {
    fn parse(line: usize, text: &str) -> Result<Record> {
        let mut fields: Vec<(String, String)> = Vec::new();
        for token in text.split_whitespace() {
            let Some((k, v)) = token.split_once('=') else {
                return Err(parse_error(line, format!("expected key=value, found `{token}`")));
            };
            if k.is_empty() || v.is_empty() {
                return Err(parse_error(line, format!("empty key or value in `{token}`")));
            }
            if fields.iter().any(|(seen, _)| seen == k) {
                return Err(parse_error(line, format!("key `{k}` repeated")));
            }
            fields.push((k.to_string(), v.to_string()));
        }
        let used = vec![false; fields.len()];
        Ok(Record { line, fields, used })
    }

    fn opt_str(&mut self, key: &str) -> Option<String> {
        let i = self.fields.iter().position(|(k, _)| k == key)?;
        self.used[i] = true;
        Some(self.fields[i].1.clone())
    }

    fn str(&mut self, key: &str) -> Result<String> {
        self.opt_str(key)
            .ok_or_else(|| parse_error(self.line, format!("missing key `{key}`")))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| parse_error(self.line, format!("`{key}`: `{v}` is not a number"))),
        }
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        self.opt_f64(key)?
            .ok_or_else(|| parse_error(self.line, format!("missing key `{key}`")))
    }

    /// Rejects keys that were never read.
    fn finish(self) -> Result<()> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(parse_error(self.line, format!("unknown key `{}`", self.fields[i].0))),
            None => Ok(()),
        }
    }
}

fn parse_bus(r: &mut Record) -> Result<Bus> {
    let id = r.str("id")?;
    let kind = match r.str("kind")?.as_str() {
        "pq" => BusKind::Pq,
        "infinite" => BusKind::Infinite {
            v: r.f64("v")?,
            angle: r.f64("angle")?,
        },
        other => return Err(parse_error(r.line, format!("unknown bus kind `{other}`"))),
    };
    Ok(Bus {
        id,
        kind,
        g: r.f64("g")?,
        b: r.f64("b")?,
    })
}

fn parse_line(r: &mut Record) -> Result<Line> {
    Ok(Line {
        id: r.str("id")?,
        from: r.str("from")?,
        to: r.str("to")?,
        r: r.f64("r")?,
        x: r.f64("x")?,
        b: r.f64("b")?,
    })
}

fn parse_generator(r: &mut Record) -> Result<Generator> {
    Ok(Generator {
        id: r.str("id")?,
        bus: r.str("bus")?,
        p: r.f64("p")?,
        v_set: r.f64("v_set")?,
        h: r.f64("h")?,
        d: r.f64("d")?,
        xd: r.f64("xd")?,
        xq: r.f64("xq")?,
        xp: r.f64("xp")?,
        td0: r.f64("td0")?,
        tq0: r.f64("tq0")?,
    })
}

fn parse_exciter(r: &mut Record) -> Result<Exciter> {
    Ok(Exciter {
        generator: r.str("generator")?,
        ka: r.f64("ka")?,
        te: r.f64("te")?,
        efd_max: r.f64("efd_max")?,
        efd_min: r.f64("efd_min")?,
    })
}

fn parse_governor(r: &mut Record) -> Result<Governor> {
    Ok(Governor {
        generator: r.str("generator")?,
        r: r.f64("r")?,
        tg: r.f64("tg")?,
    })
}

fn parse_load(r: &mut Record) -> Result<Load> {
    let id = r.str("id")?;
    let bus = r.str("bus")?;
    let p0 = r.f64("p0")?;
    let q0 = r.f64("q0")?;
    let model = match r.str("model")?.as_str() {
        "static" => LoadModel::Static {
            alpha: r.f64("alpha")?,
            beta: r.f64("beta")?,
        },
        "recovery" => LoadModel::Recovery {
            tp: r.f64("tp")?,
            tq: r.f64("tq")?,
            alpha_s: r.f64("alpha_s")?,
            alpha_t: r.f64("alpha_t")?,
            beta_s: r.f64("beta_s")?,
            beta_t: r.f64("beta_t")?,
        },
        other => return Err(parse_error(r.line, format!("unknown load model `{other}`"))),
    };
    Ok(Load { id, bus, p0, q0, model })
}

fn parse_ltc(r: &mut Record) -> Result<Ltc> {
    Ok(Ltc {
        id: r.str("id")?,
        from: r.str("from")?,
        to: r.str("to")?,
        r: r.f64("r")?,
        x: r.f64("x")?,
        ratio: r.f64("ratio")?,
        step: r.f64("step")?,
        ratio_min: r.f64("ratio_min")?,
        ratio_max: r.f64("ratio_max")?,
        v_ref: r.f64("v_ref")?,
        deadband: r.f64("deadband")?,
        delay: r.f64("delay")?,
    })
}

fn parse_oxl(r: &mut Record) -> Result<Oxl> {
    Ok(Oxl {
        generator: r.str("generator")?,
        i_lim: r.f64("i_lim")?,
        width: r.f64("width")?,
        t_r: r.f64("t_r")?,
        threshold: r.f64("threshold")?,
    })
}

fn parse_shunt(r: &mut Record) -> Result<SwitchedShunt> {
    Ok(SwitchedShunt {
        id: r.str("id")?,
        bus: r.str("bus")?,
        b: r.f64("b")?,
        v_on: r.f64("v_on")?,
        v_off: r.f64("v_off")?,
        delay: r.f64("delay")?,
    })
}

fn parse_fault(r: &mut Record) -> Result<Fault> {
    Ok(Fault {
        line: r.str("line")?,
        t: r.f64("t")?,
    })
}

struct Plan {
    name: String,
    archetype: Option<Archetype>,
    base_mva: f64,
    horizon: Horizon,
}

fn parse_plan(r: &mut Record) -> Result<Plan> {
    let name = r.str("name")?;
    let archetype = match r.opt_str("archetype") {
        None => None,
        Some(a) => Some(a.parse::<Archetype>().map_err(|m| parse_error(r.line, m))?),
    };
    let base_mva = r.f64("base_mva")?;
    let defaults = Horizon::default();
    let horizon = Horizon {
        t_end: r.f64("t_end")?,
        t0: r.opt_f64("t0")?.unwrap_or(defaults.t0),
        t1: r.opt_f64("t1")?.unwrap_or(defaults.t1),
    };
    Ok(Plan {
        name,
        archetype,
        base_mva,
        horizon,
    })
}

/// Parses and validates a scenario from text.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let mut sections: Vec<(usize, &str, Vec<Record>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(parse_error(line, "unterminated section header"));
            };
            let name = name.trim();
            let Some(known) = SECTIONS.iter().find(|s| **s == name) else {
                return Err(parse_error(line, format!("unknown section `{name}`")));
            };
            if sections.iter().any(|(_, s, _)| s == known) {
                return Err(parse_error(line, format!("section `{name}` repeated")));
            }
            sections.push((line, known, Vec::new()));
            continue;
        }
        match sections.last_mut() {
            Some((_, _, records)) => records.push(Record::parse(line, content)?),
            None => return Err(parse_error(line, "record outside a section")),
        }
    }
    if sections.is_empty() {
        return Err(parse_error(text.lines().count().max(1), "empty scenario"));
    }

    let mut sc = Scenario {
        name: String::new(),
        archetype: None,
        base_mva: 0.0,
        buses: Vec::new(),
        lines: Vec::new(),
        generators: Vec::new(),
        exciters: Vec::new(),
        governors: Vec::new(),
        loads: Vec::new(),
        ltcs: Vec::new(),
        oxls: Vec::new(),
        shunts: Vec::new(),
        fault: None,
        horizon: Horizon::default(),
    };
    let mut have_plan = false;
    for (header, name, records) in sections {
        let single = matches!(name, "plan" | "fault");
        if single && records.len() > 1 {
            return Err(parse_error(records[1].line, format!("section `{name}` holds one record")));
        }
        for mut r in records {
            match name {
                "plan" => {
                    let p = parse_plan(&mut r)?;
                    sc.name = p.name;
                    sc.archetype = p.archetype;
                    sc.base_mva = p.base_mva;
                    sc.horizon = p.horizon;
                    have_plan = true;
                }
                "buses" => sc.buses.push(parse_bus(&mut r)?),
                "lines" => sc.lines.push(parse_line(&mut r)?),
                "generators" => sc.generators.push(parse_generator(&mut r)?),
                "exciters" => sc.exciters.push(parse_exciter(&mut r)?),
                "governors" => sc.governors.push(parse_governor(&mut r)?),
                "loads" => sc.loads.push(parse_load(&mut r)?),
                "ltcs" => sc.ltcs.push(parse_ltc(&mut r)?),
                "oxls" => sc.oxls.push(parse_oxl(&mut r)?),
                "shunts" => sc.shunts.push(parse_shunt(&mut r)?),
                "fault" => sc.fault = Some(parse_fault(&mut r)?),
                _ => unreachable!("section names are checked on entry"),
            }
            r.finish()?;
        }
        if name == "plan" && !have_plan {
            return Err(parse_error(header, "section `plan` is empty"));
        }
    }
    if !have_plan {
        return Err(parse_error(1, "missing section `plan`"));
    }
    sc.validate()?;
    Ok(sc)
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_str(&text)
}

/// Prints `sc` in the scenario format.
pub fn write_scenario(sc: &Scenario) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "[plan]");
    let _ = write!(w, "name={}", sc.name);
    if let Some(a) = sc.archetype {
        let _ = write!(w, " archetype={a}");
    }
    let h = &sc.horizon;
    let _ = writeln!(
        w,
        " base_mva={:?} t_end={:?} t0={:?} t1={:?}",
        sc.base_mva, h.t_end, h.t0, h.t1
    );

    let _ = writeln!(w, "\n[buses]");
    for b in &sc.buses {
        match b.kind {
            BusKind::Pq => {
                let _ = write!(w, "id={} kind=pq", b.id);
            }
            BusKind::Infinite { v, angle } => {
                let _ = write!(w, "id={} kind=infinite v={v:?} angle={angle:?}", b.id);
            }
        }
        let _ = writeln!(w, " g={:?} b={:?}", b.g, b.b);
    }

    if !sc.lines.is_empty() {
        let _ = writeln!(w, "\n[lines]");
    }
    for l in &sc.lines {
        let _ = writeln!(
            w,
            "id={} from={} to={} r={:?} x={:?} b={:?}",
            l.id, l.from, l.to, l.r, l.x, l.b
        );
    }

    if !sc.generators.is_empty() {
        let _ = writeln!(w, "\n[generators]");
    }
    for g in &sc.generators {
        let _ = writeln!(
            w,
            "id={} bus={} p={:?} v_set={:?} h={:?} d={:?} xd={:?} xq={:?} xp={:?} td0={:?} tq0={:?}",
            g.id, g.bus, g.p, g.v_set, g.h, g.d, g.xd, g.xq, g.xp, g.td0, g.tq0
        );
    }

    if !sc.exciters.is_empty() {
        let _ = writeln!(w, "\n[exciters]");
    }
    for e in &sc.exciters {
        let _ = writeln!(
            w,
            "generator={} ka={:?} te={:?} efd_max={:?} efd_min={:?}",
            e.generator, e.ka, e.te, e.efd_max, e.efd_min
        );
    }

    if !sc.governors.is_empty() {
        let _ = writeln!(w, "\n[governors]");
    }
    for g in &sc.governors {
        let _ = writeln!(w, "generator={} r={:?} tg={:?}", g.generator, g.r, g.tg);
    }

    if !sc.loads.is_empty() {
        let _ = writeln!(w, "\n[loads]");
    }
    for l in &sc.loads {
        let _ = write!(w, "id={} bus={} p0={:?} q0={:?}", l.id, l.bus, l.p0, l.q0);
        match l.model {
            LoadModel::Static { alpha, beta } => {
                let _ = writeln!(w, " model=static alpha={alpha:?} beta={beta:?}");
            }
            LoadModel::Recovery {
                tp,
                tq,
                alpha_s,
                alpha_t,
                beta_s,
                beta_t,
            } => {
                let _ = writeln!(
                    w,
                    " model=recovery tp={tp:?} tq={tq:?} alpha_s={alpha_s:?} alpha_t={alpha_t:?} beta_s={beta_s:?} beta_t={beta_t:?}"
                );
            }
        }
    }

    if !sc.ltcs.is_empty() {
        let _ = writeln!(w, "\n[ltcs]");
    }
    for t in &sc.ltcs {
        let _ = writeln!(
            w,
            "id={} from={} to={} r={:?} x={:?} ratio={:?} step={:?} ratio_min={:?} ratio_max={:?} v_ref={:?} deadband={:?} delay={:?}",
            t.id, t.from, t.to, t.r, t.x, t.ratio, t.step, t.ratio_min, t.ratio_max, t.v_ref, t.deadband, t.delay
        );
    }

    if !sc.oxls.is_empty() {
        let _ = writeln!(w, "\n[oxls]");
    }
    for o in &sc.oxls {
        let _ = writeln!(
            w,
            "generator={} i_lim={:?} width={:?} t_r={:?} threshold={:?}",
            o.generator, o.i_lim, o.width, o.t_r, o.threshold
        );
    }

    if !sc.shunts.is_empty() {
        let _ = writeln!(w, "\n[shunts]");
    }
    for s in &sc.shunts {
        let _ = writeln!(
            w,
            "id={} bus={} b={:?} v_on={:?} v_off={:?} delay={:?}",
            s.id, s.bus, s.b, s.v_on, s.v_off, s.delay
        );
    }

    if let Some(f) = &sc.fault {
        let _ = writeln!(w, "\n[fault]");
        let _ = writeln!(w, "line={} t={:?}", f.line, f.t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{scenario_qss_difficulty, scenario_stable, scenario_unstable};

    #[test]
    fn bundled_round_trip() {
        for sc in [scenario_stable(), scenario_qss_difficulty(), scenario_unstable()] {
            let text = write_scenario(&sc);
            assert_eq!(parse_scenario_str(&text).unwrap(), sc, "{}", sc.name);
        }
    }

    #[test]
    fn empty_is_a_parse_error() {
        assert!(matches!(parse_scenario_str(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_scenario_str("# nothing\n\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_key_names_the_line() {
        let mut text = write_scenario(&scenario_stable());
        text = text.replacen("tg=", "tg_extra=1.0 tg=", 1);
        let line = text.lines().position(|l| l.contains("tg_extra")).unwrap() + 1;
        match parse_scenario_str(&text) {
            Err(Error::Parse { line: at, message }) => {
                assert_eq!(at, line);
                assert!(message.contains("tg_extra"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_key_and_bad_number() {
        let text = write_scenario(&scenario_stable());
        let no_x = text.replacen(" x=0.", " y=0.", 1);
        assert!(matches!(parse_scenario_str(&no_x), Err(Error::Parse { .. })));
        let bad = text.replacen("tg=", "tg=abc tgx=", 1);
        assert!(matches!(parse_scenario_str(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn tap_step_must_be_positive() {
        let text = write_scenario(&scenario_stable()).replacen(" step=0.0125", " step=0.0", 1);
        match parse_scenario_str(&text) {
            Err(Error::Validation(m)) => assert!(m.contains("tap step > 0"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_section_and_stray_record() {
        assert!(matches!(parse_scenario_str("[nope]\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_scenario_str("id=B\n"), Err(Error::Parse { line: 1, .. })));
    }
}
