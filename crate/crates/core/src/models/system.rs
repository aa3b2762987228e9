//! Compiled power-system model.
//!
//! Variable layout:
//!
//! ```text
//! z_c = [governor P_m | recovery-load (z_p, z_q) | OXL timer]
//! z_d = [line status | LTC ratio | OXL flag]
//! x   = [machine (δ, ω, e'_q, e'_d) | exciter E_fd]
//! y   = [(θ, V) for every bus that is not infinite]
//! ```
//!
//! `g` rows are bus power mismatches `P_dev − P_net`, `Q_dev − Q_net`.

use std::f64::consts::FRAC_PI_2;

use super::ad::{smooth_max, smooth_min, Dual, Scalar};
use super::scenario::{BusKind, LoadModel, Scenario};
use crate::dae::{DaeModel, Dims};
use crate::error::{Error, Result};
use crate::numeric::{norm, solve_linear, Matrix};

/// Nominal angular frequency, rad/s.
pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 50.0;
/// Width of the smooth field-voltage limits, per unit.
pub const LIMIT_WIDTH: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
enum BusRef {
    Fixed { v: f64, angle: f64 },
    /// Index of the bus in the `y` block (θ at `2k`, V at `2k + 1`).
    Free(usize),
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    from: usize,
    to: usize,
    g: f64,
    b: f64,
    b_charging: f64,
    /// `z_d` index of the status flag (lines) or tap ratio (LTCs).
    zd: usize,
    is_ltc: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Machine {
    bus: usize,
    x: usize,
    h: f64,
    d: f64,
    xd: f64,
    xq: f64,
    xp: f64,
    td0: f64,
    tq0: f64,
    /// `x` index of `E_fd`, or the constant field voltage.
    efd: Field,
    /// `z_c` index of `P_m`, or the constant mechanical power.
    pm: Mech,
}

#[derive(Clone, Debug, PartialEq)]
enum Field {
    Constant(f64),
    Avr {
        x: usize,
        ka: f64,
        te: f64,
        efd_max: f64,
        efd_min: f64,
        v_ref: f64,
        /// `z_d` index of the OXL flag and the capped field voltage.
        oxl: Option<(usize, f64)>,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Mech {
    Constant(f64),
    Governor { zc: usize, r: f64, tg: f64, p_ref: f64 },
}

#[derive(Clone, Debug, PartialEq)]
struct OxlTimer {
    machine: usize,
    zc: usize,
    i_lim: f64,
    width: f64,
    t_r: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct CLoad {
    bus: usize,
    p0: f64,
    q0: f64,
    v0: f64,
    kind: CLoadKind,
}

#[derive(Clone, Debug, PartialEq)]
enum CLoadKind {
    Static {
        alpha: f64,
        beta: f64,
    },
    Recovery {
        zc: usize,
        tp: f64,
        tq: f64,
        alpha_s: f64,
        alpha_t: f64,
        beta_s: f64,
        beta_t: f64,
    },
}

/// Where things live in `p` and `z_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub dims: Dims,
    pub names: Vec<String>,
    pub zd_names: Vec<String>,
    /// `p` index of each bus voltage magnitude (`None` for infinite buses).
    pub bus_v: Vec<Option<usize>>,
    /// `z_d` index of each line's status flag, in scenario order.
    pub line_status: Vec<usize>,
    /// `z_d` index of each LTC ratio, in scenario order.
    pub ltc_ratio: Vec<usize>,
    /// `z_d` index of each switched shunt's susceptance, in scenario order.
    pub shunt_b: Vec<usize>,
    /// `(generator id, z_c index of timer, z_d index of flag)` per OXL.
    pub oxl: Vec<(String, usize, usize)>,
    /// `g` rows (offsets within `g`) of each bus's P and Q balance.
    pub bus_rows: Vec<Option<(usize, usize)>>,
}

/// A scenario compiled into a [`DaeModel`].
#[derive(Clone, Debug)]
pub struct PowerSystem {
    pub layout: Layout,
    buses: Vec<BusRef>,
    net: Network,
    machines: Vec<Machine>,
    oxls: Vec<OxlTimer>,
    loads: Vec<CLoad>,
    epsilon: f64,
}

/// Fixed bus shunts, switched shunts as `(bus, z_d index)`, and branches.
#[derive(Clone, Debug)]
struct Network {
    shunts: Vec<(f64, f64)>,
    switched: Vec<(usize, usize)>,
    branches: Vec<Branch>,
}

/// Voltages of all buses as `(V, θ)`.
fn bus_voltages<S: Scalar>(buses: &[BusRef], y: &[S]) -> Vec<(S, S)> {
    buses
        .iter()
        .map(|b| match b {
            BusRef::Fixed { v, angle } => (S::cst(*v), S::cst(*angle)),
            BusRef::Free(k) => (y[2 * k + 1].clone(), y[2 * k].clone()),
        })
        .collect()
}

/// Dense bus admittance matrix `(G, B)` for the given discrete state.
fn admittance(net: &Network, zd: &[f64]) -> (Matrix, Matrix) {
    let n = net.shunts.len();
    let mut g = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, n);
    for (i, &(gs, bs)) in net.shunts.iter().enumerate() {
        g[(i, i)] += gs;
        b[(i, i)] += bs;
    }
    for &(i, k) in &net.switched {
        b[(i, i)] += zd[k];
    }
    let branches = &net.branches;
    for br in branches {
        let (i, j) = (br.from, br.to);
        let (ratio, status) = if br.is_ltc { (zd[br.zd], 1.0) } else { (1.0, zd[br.zd]) };
        if status == 0.0 {
            continue;
        }
        let (ys_g, ys_b) = (br.g * status, br.b * status);
        g[(i, i)] += ratio * ratio * ys_g;
        b[(i, i)] += ratio * ratio * ys_b + 0.5 * br.b_charging;
        g[(j, j)] += ys_g;
        b[(j, j)] += ys_b + 0.5 * br.b_charging;
        g[(i, j)] -= ratio * ys_g;
        b[(i, j)] -= ratio * ys_b;
        g[(j, i)] -= ratio * ys_g;
        b[(j, i)] -= ratio * ys_b;
    }
    (g, b)
}

/// Net injections `P_i + jQ_i = V_i conj(Σ_k Y_ik V_k)` for every bus.
fn injections<S: Scalar>(g: &Matrix, b: &Matrix, v: &[(S, S)]) -> Vec<(S, S)> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut p = S::cst(0.0);
            let mut q = S::cst(0.0);
            for k in 0..n {
                let (gik, bik) = (g[(i, k)], b[(i, k)]);
                if gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let th = v[i].1.clone() - v[k].1.clone();
                let (c, s) = (th.cos(), th.sin());
                let vv = v[i].0.clone() * v[k].0.clone();
                p = p + vv.clone() * (c.clone() * gik + s.clone() * bik);
                q = q + vv * (s * gik - c * bik);
            }
            (p, q)
        })
        .collect()
}

/// Machine stator quantities in the rotor frame.
struct Stator<S> {
    id: S,
    iq: S,
    pe: S,
    q: S,
}

fn stator<S: Scalar>(m: &Machine, x: &[S], v: &S, theta: &S) -> Stator<S> {
    let (delta, eq, ed) = (x[m.x].clone(), x[m.x + 2].clone(), x[m.x + 3].clone());
    let ang = delta - theta.clone();
    let vd = v.clone() * ang.sin();
    let vq = v.clone() * ang.cos();
    let id = (eq.clone() - vq.clone()) / m.xp;
    let iq = (vd.clone() - ed.clone()) / m.xp;
    let pe = ed * id.clone() + eq * iq.clone();
    let q = vq * id.clone() - vd * iq.clone();
    Stator { id, iq, pe, q }
}

fn ratio_pow<S: Scalar>(v: &S, v0: f64, a: f64) -> S {
    (v.clone() / v0).powf(a)
}

impl PowerSystem {
    /// Evaluates `(h_c, f, g)` for any scalar type.
    fn equations<S: Scalar>(&self, zd: &[f64], p: &[S]) -> (Vec<S>, Vec<S>, Vec<S>) {
        let d = self.layout.dims;
        let (zc, rest) = p.split_at(d.n_zc);
        let (x, y) = rest.split_at(d.n_x);
        let zero = || S::cst(0.0);
        let mut hc = vec![zero(); d.n_zc];
        let mut f = vec![zero(); d.n_x];

        let volt = bus_voltages(&self.buses, y);
        let nb = self.buses.len();
        let mut dev_p = vec![zero(); nb];
        let mut dev_q = vec![zero(); nb];

        for (mi, m) in self.machines.iter().enumerate() {
            let (v, th) = &volt[m.bus];
            let st = stator(m, x, v, th);
            let omega = x[m.x + 1].clone();
            let efd = match &m.efd {
                Field::Constant(e) => S::cst(*e),
                Field::Avr {
                    x: k,
                    ka,
                    te,
                    efd_max,
                    efd_min,
                    v_ref,
                    oxl,
                } => {
                    let cap = match oxl {
                        Some((flag, cap)) if zd[*flag] != 0.0 => *cap,
                        _ => *efd_max,
                    };
                    let target = (S::cst(*v_ref) - v.clone()) * *ka;
                    let limited = smooth_max(smooth_min(target, S::cst(cap), LIMIT_WIDTH), S::cst(*efd_min), LIMIT_WIDTH);
                    f[*k] = (limited - x[*k].clone()) / *te;
                    x[*k].clone()
                }
            };
            let pm = match &m.pm {
                Mech::Constant(pm) => S::cst(*pm),
                Mech::Governor { zc: k, r, tg, p_ref } => {
                    hc[*k] = (S::cst(*p_ref) - (omega.clone() - 1.0) / *r - zc[*k].clone()) / *tg;
                    zc[*k].clone()
                }
            };
            f[m.x] = (omega.clone() - 1.0) * OMEGA_S;
            f[m.x + 1] = (pm - st.pe.clone() - (omega - 1.0) * m.d) / (2.0 * m.h);
            f[m.x + 2] = (efd - x[m.x + 2].clone() - st.id.clone() * (m.xd - m.xp)) / m.td0;
            f[m.x + 3] = (st.iq.clone() * (m.xq - m.xp) - x[m.x + 3].clone()) / m.tq0;
            for o in self.oxls.iter().filter(|o| o.machine == mi) {
                let ifd = x[m.x + 2].clone() + st.id.clone() * (m.xd - m.xp);
                hc[o.zc] = ((ifd - o.i_lim) / o.width).sigmoid() - zc[o.zc].clone() / o.t_r;
            }
            dev_p[m.bus] = dev_p[m.bus].clone() + st.pe;
            dev_q[m.bus] = dev_q[m.bus].clone() + st.q;
        }

        for l in &self.loads {
            let v = &volt[l.bus].0;
            let (pl, ql) = match &l.kind {
                CLoadKind::Static { alpha, beta } => (ratio_pow(v, l.v0, *alpha) * l.p0, ratio_pow(v, l.v0, *beta) * l.q0),
                CLoadKind::Recovery {
                    zc: k,
                    tp,
                    tq,
                    alpha_s,
                    alpha_t,
                    beta_s,
                    beta_t,
                } => {
                    let pt = ratio_pow(v, l.v0, *alpha_t) * l.p0;
                    let qt = ratio_pow(v, l.v0, *beta_t) * l.q0;
                    hc[*k] = ratio_pow(v, l.v0, *alpha_s) * l.p0 - pt.clone() - zc[*k].clone() / *tp;
                    hc[*k + 1] = ratio_pow(v, l.v0, *beta_s) * l.q0 - qt.clone() - zc[*k + 1].clone() / *tq;
                    (zc[*k].clone() / *tp + pt, zc[*k + 1].clone() / *tq + qt)
                }
            };
            dev_p[l.bus] = dev_p[l.bus].clone() - pl;
            dev_q[l.bus] = dev_q[l.bus].clone() - ql;
        }

        let (gm, bm) = admittance(&self.net, zd);
        let inj = injections(&gm, &bm, &volt);
        let mut g = vec![zero(); d.n_y];
        for (i, b) in self.buses.iter().enumerate() {
            if let BusRef::Free(k) = b {
                g[2 * k] = dev_p[i].clone() - inj[i].0.clone();
                g[2 * k + 1] = dev_q[i].clone() - inj[i].1.clone();
            }
        }
        (hc, f, g)
    }

    /// Net power injected by the network into each bus, at `(zd, p)`.
    pub fn network_injections(&self, zd: &[f64], p: &[f64]) -> Vec<(f64, f64)> {
        let d = self.layout.dims;
        let y = &p[d.n_zc + d.n_x..];
        let volt = bus_voltages(&self.buses, y);
        let (gm, bm) = admittance(&self.net, zd);
        injections(&gm, &bm, &volt)
    }

    /// Voltage magnitude and angle of every bus at `p`.
    pub fn bus_voltages(&self, p: &[f64]) -> Vec<(f64, f64)> {
        let d = self.layout.dims;
        bus_voltages(&self.buses, &p[d.n_zc + d.n_x..])
    }
}

impl DaeModel for PowerSystem {
    fn dims(&self) -> Dims {
        self.layout.dims
    }

    fn eval(&self, zd: &[f64], p: &[f64], hc: &mut [f64], f: &mut [f64], g: &mut [f64]) -> Result<()> {
        let (a, b, c) = self.equations::<f64>(zd, p);
        hc.copy_from_slice(&a);
        f.copy_from_slice(&b);
        g.copy_from_slice(&c);
        Ok(())
    }

    fn jacobian(&self, zd: &[f64], p: &[f64]) -> Option<Result<Matrix>> {
        let n = p.len();
        let vars: Vec<Dual> = p.iter().enumerate().map(|(i, &v)| Dual::var(v, i, n)).collect();
        let (a, b, c) = self.equations(zd, &vars);
        let mut jac = Matrix::zeros(n, n);
        for (i, row) in a.iter().chain(&b).chain(&c).enumerate() {
            for (j, dv) in row.d.iter().enumerate() {
                jac[(i, j)] = *dv;
            }
            if !row.v.is_finite() || row.d.iter().any(|v| !v.is_finite()) {
                return Some(Err(Error::NonFiniteResidual(format!("Jacobian row {i}"))));
            }
        }
        Some(Ok(jac))
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn variable_names(&self) -> Vec<String> {
        self.layout.names.clone()
    }
}

/// Result of the initial power flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlow {
    /// `(V, θ)` per bus.
    pub voltages: Vec<(f64, f64)>,
    /// Reactive output per generator, in scenario order.
    pub q_gen: Vec<f64>,
    pub iterations: usize,
}

/// Newton power flow with generators as PV buses and loads at their
/// scheduled constant power. LTC ratios and line statuses are the
/// scenario's initial values.
pub fn power_flow(sc: &Scenario) -> Result<PowerFlow> {
    sc.validate()?;
    let nb = sc.buses.len();
    let (net, zd0) = network_data(sc);
    let (gm, bm) = admittance(&net, &zd0);

    let gen_at: Vec<Option<usize>> = (0..nb)
        .map(|i| sc.generators.iter().position(|g| sc.bus_index(&g.bus) == Some(i)))
        .collect();
    // unknowns: θ for every non-infinite bus, V for those without a generator
    let mut theta_idx = vec![None; nb];
    let mut v_idx = vec![None; nb];
    let mut n = 0;
    for (i, b) in sc.buses.iter().enumerate() {
        if matches!(b.kind, BusKind::Pq) {
            theta_idx[i] = Some(n);
            n += 1;
        }
    }
    for (i, b) in sc.buses.iter().enumerate() {
        if matches!(b.kind, BusKind::Pq) && gen_at[i].is_none() {
            v_idx[i] = Some(n);
            n += 1;
        }
    }
    let mut sched_p = vec![0.0; nb];
    let mut sched_q = vec![0.0; nb];
    for g in &sc.generators {
        sched_p[sc.bus_index(&g.bus).unwrap()] += g.p;
    }
    for l in &sc.loads {
        let i = sc.bus_index(&l.bus).unwrap();
        sched_p[i] -= l.p0;
        sched_q[i] -= l.q0;
    }

    let volts = |u: &[Dual]| -> Vec<(Dual, Dual)> {
        sc.buses
            .iter()
            .enumerate()
            .map(|(i, b)| match b.kind {
                BusKind::Infinite { v, angle } => (Dual::cst(v), Dual::cst(angle)),
                BusKind::Pq => {
                    let th = u[theta_idx[i].unwrap()].clone();
                    let v = match (v_idx[i], gen_at[i]) {
                        (Some(k), _) => u[k].clone(),
                        (None, Some(gi)) => Dual::cst(sc.generators[gi].v_set),
                        (None, None) => unreachable!(),
                    };
                    (v, th)
                }
            })
            .collect()
    };
    let mismatch = |u: &[Dual]| -> Vec<Dual> {
        let inj = injections(&gm, &bm, &volts(u));
        let mut out = vec![Dual::cst(0.0); n];
        for i in 0..nb {
            if let Some(k) = theta_idx[i] {
                out[k] = Dual::cst(sched_p[i]) - inj[i].0.clone();
            }
            if let Some(k) = v_idx[i] {
                out[k] = Dual::cst(sched_q[i]) - inj[i].1.clone();
            }
        }
        out
    };

    let mut u = vec![0.0; n];
    for i in 0..nb {
        if let Some(k) = v_idx[i] {
            u[k] = 1.0;
        }
    }
    let max_iters = 50;
    let mut iterations = 0;
    loop {
        let vars: Vec<Dual> = u.iter().enumerate().map(|(i, &v)| Dual::var(v, i, n)).collect();
        let r = mismatch(&vars);
        let rv: Vec<f64> = r.iter().map(|d| d.v).collect();
        let rn = norm(&rv);
        if !rn.is_finite() {
            return Err(Error::PowerFlowNoConvergence("non-finite mismatch".into()));
        }
        if rn <= 1e-12 {
            break;
        }
        if iterations == max_iters {
            return Err(Error::PowerFlowNoConvergence(format!(
                "mismatch {rn:e} after {max_iters} iterations"
            )));
        }
        let mut jac = Matrix::zeros(n, n);
        for (i, row) in r.iter().enumerate() {
            for (j, dv) in row.d.iter().enumerate() {
                jac[(i, j)] = *dv;
            }
        }
        let rhs: Vec<f64> = rv.iter().map(|v| -v).collect();
        let step = solve_linear(&jac, &rhs).map_err(|e| Error::PowerFlowNoConvergence(e.to_string()))?;
        for (a, s) in u.iter_mut().zip(step.iter()) {
            *a += s;
        }
        iterations += 1;
    }

    let vars: Vec<Dual> = u.iter().map(|&v| Dual::cst(v)).collect();
    let vd = volts(&vars);
    let voltages: Vec<(f64, f64)> = vd.iter().map(|(v, t)| (v.v, t.v)).collect();
    if voltages.iter().any(|(v, _)| *v <= 0.0) {
        return Err(Error::PowerFlowNoConvergence("non-positive voltage in solution".into()));
    }
    let inj = injections(&gm, &bm, &voltages);
    let q_gen = sc
        .generators
        .iter()
        .map(|g| {
            let i = sc.bus_index(&g.bus).unwrap();
            let load_q: f64 = sc.loads.iter().filter(|l| l.bus == g.bus).map(|l| l.q0).sum();
            inj[i].1 + load_q
        })
        .collect();
    Ok(PowerFlow {
        voltages,
        q_gen,
        iterations,
    })
}

/// Network data and the initial `z_d` of the network part: line statuses,
/// LTC ratios, switched shunt susceptances.
fn network_data(sc: &Scenario) -> (Network, Vec<f64>) {
    let shunts = sc.buses.iter().map(|b| (b.g, b.b)).collect();
    let mut branches = Vec::new();
    let mut zd = Vec::new();
    for l in &sc.lines {
        let den = l.r * l.r + l.x * l.x;
        branches.push(Branch {
            from: sc.bus_index(&l.from).unwrap(),
            to: sc.bus_index(&l.to).unwrap(),
            g: l.r / den,
            b: -l.x / den,
            b_charging: l.b,
            zd: zd.len(),
            is_ltc: false,
        });
        zd.push(1.0);
    }
    for t in &sc.ltcs {
        let den = t.r * t.r + t.x * t.x;
        branches.push(Branch {
            from: sc.bus_index(&t.from).unwrap(),
            to: sc.bus_index(&t.to).unwrap(),
            g: t.r / den,
            b: -t.x / den,
            b_charging: 0.0,
            zd: zd.len(),
            is_ltc: true,
        });
        zd.push(t.ratio);
    }
    let mut switched = Vec::new();
    for sh in &sc.shunts {
        switched.push((sc.bus_index(&sh.bus).unwrap(), zd.len()));
        zd.push(0.0);
    }
    (
        Network {
            shunts,
            switched,
            branches,
        },
        zd,
    )
}

/// Field voltage command that the smooth limiter maps onto `efd`.
fn invert_limiter(efd: f64, cap: f64, floor: f64) -> Option<f64> {
    let lim = |a: f64| smooth_max(smooth_min(a, cap, LIMIT_WIDTH), floor, LIMIT_WIDTH);
    let (mut lo, mut hi) = (floor - 1.0, cap + 1.0);
    if !(lim(lo) < efd && efd < lim(hi)) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lim(mid) < efd {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// The compiled model, its initial state and the continuous-variable
/// values it was initialized with.
pub struct Compiled {
    pub system: PowerSystem,
    pub zc: Vec<f64>,
    pub zd: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Compiles `sc` and initializes every device at equilibrium with the
/// initial power flow.
pub fn compile(sc: &Scenario) -> Result<Compiled> {
    let pf = power_flow(sc)?;
    let (net, mut zd) = network_data(sc);
    let n_lines = sc.lines.len();
    let n_ltc = sc.ltcs.len();
    let n_sh = sc.shunts.len();

    // y block
    let mut buses = Vec::new();
    let mut y = Vec::new();
    let mut names_y = Vec::new();
    for (i, b) in sc.buses.iter().enumerate() {
        match b.kind {
            BusKind::Infinite { v, angle } => buses.push(BusRef::Fixed { v, angle }),
            BusKind::Pq => {
                let k = y.len() / 2;
                buses.push(BusRef::Free(k));
                y.push(pf.voltages[i].1);
                y.push(pf.voltages[i].0);
                names_y.push(format!("{}.theta", b.id));
                names_y.push(format!("{}.v", b.id));
            }
        }
    }

    let mut zc = Vec::new();
    let mut names_zc = Vec::new();
    let mut x = Vec::new();
    let mut names_x = Vec::new();
    let mut zd_names: Vec<String> = sc
        .lines
        .iter()
        .map(|l| format!("{}.status", l.id))
        .chain(sc.ltcs.iter().map(|t| format!("{}.ratio", t.id)))
        .chain(sc.shunts.iter().map(|sh| format!("{}.b", sh.id)))
        .collect();

    let mut machines = Vec::new();
    let mut oxls = Vec::new();
    let mut oxl_layout = Vec::new();
    // machine states first, exciters after all machines
    for g in &sc.generators {
        x.extend([0.0; 4]);
        for s in ["delta", "omega", "eq", "ed"] {
            names_x.push(format!("{}.{s}", g.id));
        }
    }
    for (gi, g) in sc.generators.iter().enumerate() {
        let bi = sc.bus_index(&g.bus).unwrap();
        let (vm, th) = pf.voltages[bi];
        let (p, q) = (g.p, pf.q_gen[gi]);
        // I = conj(S / V)
        let (vr, vi) = (vm * th.cos(), vm * th.sin());
        let den = vm * vm;
        let (ir, ii) = ((p * vr + q * vi) / den, (p * vi - q * vr) / den);
        // E_q = V + j xq I fixes the rotor angle
        let (er, ei) = (vr - g.xq * ii, vi + g.xq * ir);
        let delta = ei.atan2(er);
        let rot = delta - FRAC_PI_2;
        let to_dq = |re: f64, im: f64| (re * rot.cos() + im * rot.sin(), -re * rot.sin() + im * rot.cos());
        let (vd, vq) = to_dq(vr, vi);
        let (id, iq) = to_dq(ir, ii);
        let ed = vd - g.xp * iq;
        let eq = vq + g.xp * id;
        let efd = eq + (g.xd - g.xp) * id;
        let xo = 4 * gi;
        x[xo..xo + 4].copy_from_slice(&[delta, 1.0, eq, ed]);

        let pm = match sc.governors.iter().find(|gv| gv.generator == g.id) {
            None => Mech::Constant(p),
            Some(gv) => {
                let k = zc.len();
                zc.push(p);
                names_zc.push(format!("{}.pm", g.id));
                Mech::Governor {
                    zc: k,
                    r: gv.r,
                    tg: gv.tg,
                    p_ref: p,
                }
            }
        };
        let oxl = sc.oxls.iter().find(|o| o.generator == g.id);
        let field = match sc.exciters.iter().find(|e| e.generator == g.id) {
            None => Field::Constant(efd),
            Some(e) => {
                let k = x.len();
                x.push(efd);
                names_x.push(format!("{}.efd", g.id));
                let a = invert_limiter(efd, e.efd_max, e.efd_min).ok_or_else(|| {
                    Error::Validation(format!(
                        "generator {}: initial field voltage {efd:.4} outside exciter limits",
                        g.id
                    ))
                })?;
                let oxl_flag = oxl.map(|o| {
                    let flag = zd.len();
                    zd.push(0.0);
                    zd_names.push(format!("{}.oxl", g.id));
                    (flag, o.i_lim)
                });
                Field::Avr {
                    x: k,
                    ka: e.ka,
                    te: e.te,
                    efd_max: e.efd_max,
                    efd_min: e.efd_min,
                    v_ref: vm + a / e.ka,
                    oxl: oxl_flag,
                }
            }
        };
        if let Some(o) = oxl {
            let flag = match &field {
                Field::Avr { oxl: Some((flag, _)), .. } => *flag,
                _ => {
                    return Err(Error::Validation(format!(
                        "oxl on generator {} requires an exciter",
                        g.id
                    )))
                }
            };
            let k = zc.len();
            let sig = 1.0 / (1.0 + (-(efd - o.i_lim) / o.width).exp());
            if o.t_r * sig >= o.threshold {
                return Err(Error::Validation(format!(
                    "generator {}: initial field current {efd:.4} already trips the oxl",
                    g.id
                )));
            }
            zc.push(o.t_r * sig);
            names_zc.push(format!("{}.oxl_timer", g.id));
            oxls.push(OxlTimer {
                machine: gi,
                zc: k,
                i_lim: o.i_lim,
                width: o.width,
                t_r: o.t_r,
            });
            oxl_layout.push((g.id.clone(), k, flag));
        }
        machines.push(Machine {
            bus: bi,
            x: xo,
            h: g.h,
            d: g.d,
            xd: g.xd,
            xq: g.xq,
            xp: g.xp,
            td0: g.td0,
            tq0: g.tq0,
            efd: field,
            pm,
        });
    }

    let mut loads = Vec::new();
    for l in &sc.loads {
        let bi = sc.bus_index(&l.bus).unwrap();
        let v0 = pf.voltages[bi].0;
        let kind = match l.model {
            LoadModel::Static { alpha, beta } => CLoadKind::Static { alpha, beta },
            LoadModel::Recovery {
                tp,
                tq,
                alpha_s,
                alpha_t,
                beta_s,
                beta_t,
            } => {
                let k = zc.len();
                zc.extend([0.0, 0.0]);
                names_zc.push(format!("{}.zp", l.id));
                names_zc.push(format!("{}.zq", l.id));
                CLoadKind::Recovery {
                    zc: k,
                    tp,
                    tq,
                    alpha_s,
                    alpha_t,
                    beta_s,
                    beta_t,
                }
            }
        };
        loads.push(CLoad {
            bus: bi,
            p0: l.p0,
            q0: l.q0,
            v0,
            kind,
        });
    }

    // z_c ordering: governors, loads, OXL timers. Machines were visited in
    // one pass, so reorder the indices now.
    let gov_count = machines.iter().filter(|m| matches!(m.pm, Mech::Governor { .. })).count();
    let load_count = 2 * loads.iter().filter(|l| matches!(l.kind, CLoadKind::Recovery { .. })).count();
    let mut perm = vec![0usize; zc.len()];
    {
        let (mut ng, mut nl, mut no) = (0, gov_count, gov_count + load_count);
        let mut order: Vec<(usize, usize)> = Vec::new(); // (old, new)
        for (old, name) in names_zc.iter().enumerate() {
            let new = if name.ends_with(".pm") {
                ng += 1;
                ng - 1
            } else if name.ends_with(".zp") || name.ends_with(".zq") {
                nl += 1;
                nl - 1
            } else {
                no += 1;
                no - 1
            };
            order.push((old, new));
        }
        for (old, new) in order {
            perm[old] = new;
        }
    }
    let mut zc_sorted = vec![0.0; zc.len()];
    let mut names_sorted = vec![String::new(); zc.len()];
    for (old, &new) in perm.iter().enumerate() {
        zc_sorted[new] = zc[old];
        names_sorted[new] = names_zc[old].clone();
    }
    for m in &mut machines {
        if let Mech::Governor { zc: k, .. } = &mut m.pm {
            *k = perm[*k];
        }
    }
    for l in &mut loads {
        if let CLoadKind::Recovery { zc: k, .. } = &mut l.kind {
            *k = perm[*k];
        }
    }
    for o in &mut oxls {
        o.zc = perm[o.zc];
    }
    for o in &mut oxl_layout {
        o.1 = perm[o.1];
    }

    let n_zc = zc_sorted.len();
    let n_x = x.len();
    let dims = Dims::new(n_zc, zd.len(), n_x, y.len());
    let bus_v = buses
        .iter()
        .map(|b| match b {
            BusRef::Fixed { .. } => None,
            BusRef::Free(k) => Some(n_zc + n_x + 2 * k + 1),
        })
        .collect();
    let bus_rows = buses
        .iter()
        .map(|b| match b {
            BusRef::Fixed { .. } => None,
            BusRef::Free(k) => Some((2 * k, 2 * k + 1)),
        })
        .collect();
    let names = names_sorted.into_iter().chain(names_x).chain(names_y).collect();

    let mut time_constants = Vec::new();
    for g in &sc.generators {
        time_constants.extend([g.td0, g.tq0]);
    }
    time_constants.extend(sc.exciters.iter().map(|e| e.te));
    time_constants.extend(sc.governors.iter().map(|g| g.tg));
    time_constants.extend(sc.oxls.iter().map(|o| o.t_r));
    for l in &sc.loads {
        if let LoadModel::Recovery { tp, tq, .. } = l.model {
            time_constants.extend([tp, tq]);
        }
    }
    let epsilon = 1.0 / time_constants.into_iter().fold(1.0, f64::max);

    let layout = Layout {
        dims,
        names,
        zd_names,
        bus_v,
        line_status: (0..n_lines).collect(),
        ltc_ratio: (n_lines..n_lines + n_ltc).collect(),
        shunt_b: (n_lines + n_ltc..n_lines + n_ltc + n_sh).collect(),
        oxl: oxl_layout,
        bus_rows,
    };
    Ok(Compiled {
        system: PowerSystem {
            layout,
            buses,
            net,
            machines,
            oxls,
            loads,
            epsilon,
        },
        zc: zc_sorted,
        zd,
        x,
        y,
    })
}
