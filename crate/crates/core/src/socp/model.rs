//! The DER coordination model as a cone program.
//!
//! Decision variables per household are the PV, EV and heat-pump active and
//! reactive setpoints together with the curtailment and regulation
//! quantities. The network part is the branch-flow model with the
//! current/voltage coupling relaxed to a rotated second-order cone. All powers
//! are per-unit inside the program and kW/kvar outside it.

use serde::{Deserialize, Serialize};

use super::program::{ConicProgram, ConicSolution, SolveStatus};
use super::SocpError;
use crate::der::{CostTerms, DeviceSchedule, Household};
use crate::grid::{BusKind, Grid};

/// Everything needed to build one slot's coordination program.
#[derive(Debug, Clone, Copy)]
pub struct CoordinationProblem<'a> {
    pub grid: &'a Grid,
    pub households: &'a [Household],
    pub schedule: &'a [DeviceSchedule],
    pub costs: &'a CostTerms,
    /// Slot length, hours.
    pub slot_hours: f64,
    /// Tightening applied to voltage and current limits inside the model, pu^2.
    pub limit_margin: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PvVars {
    p: usize,
    q: usize,
    down: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct EvVars {
    p: usize,
    q: usize,
    down: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct HpVars {
    p: usize,
    q: usize,
    up: usize,
    down: usize,
}

#[derive(Debug, Clone, Default)]
struct HouseholdVars {
    p: usize,
    q: usize,
    pv: Option<PvVars>,
    ev: Option<EvVars>,
    hp: Option<HpVars>,
}

/// Variable layout of a built program.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    households: Vec<HouseholdVars>,
    v: Vec<usize>,
    p_flow: Vec<usize>,
    q_flow: Vec<usize>,
    l: Vec<usize>,
}

/// A built program together with the map back to model quantities.
#[derive(Debug, Clone)]
pub struct CoordinationProgram {
    pub program: ConicProgram,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub p_ev: f64,
    pub p_hp: f64,
    pub p_pv: f64,
    pub q_ev: f64,
    pub q_pv: f64,
    pub q_hp: f64,
}

impl Setpoint {
    /// Net active and reactive injection into the grid, kW/kvar.
    pub fn injection(&self, sched: &DeviceSchedule) -> (f64, f64) {
        (
            self.p_pv - sched.p_load - self.p_ev - self.p_hp,
            self.q_pv + self.q_ev - self.q_hp - sched.q_load,
        )
    }

    /// The household doing exactly what it scheduled.
    pub fn from_schedule(sched: &DeviceSchedule, hp_tan_phi: f64) -> Self {
        Self {
            p_ev: sched.p_ev_max,
            p_hp: sched.p_hp_set,
            p_pv: sched.p_pv_fore,
            q_ev: 0.0,
            q_pv: 0.0,
            q_hp: sched.p_hp_set * hp_tan_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Curtailment {
    pub ev_down: f64,
    pub pv_down: f64,
    pub hp_up: f64,
    pub hp_down: f64,
}

impl Curtailment {
    pub fn of(set: &Setpoint, sched: &DeviceSchedule) -> Self {
        Self {
            ev_down: sched.p_ev_max - set.p_ev,
            pv_down: sched.p_pv_fore - set.p_pv,
            hp_up: (set.p_hp - sched.p_hp_set).max(0.0),
            hp_down: (sched.p_hp_set - set.p_hp).max(0.0),
        }
    }
}

/// Objective split by term, EUR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub loss: f64,
    pub ev: f64,
    pub pv: f64,
    pub hp_up: f64,
    pub hp_down: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.loss + self.ev + self.pv + self.hp_up + self.hp_down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationResult {
    /// kW / kvar per household.
    pub setpoints: Vec<Setpoint>,
    /// kW per household.
    pub curtailments: Vec<Curtailment>,
    /// Voltage squared per bus, pu^2.
    pub v: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Current squared per line, pu^2.
    pub l: Vec<f64>,
    /// EUR for the slot.
    pub objective_eur: f64,
    pub breakdown: ObjectiveBreakdown,
    /// EUR per (EUR/MWh x pu) of the program objective: base power in MW times slot hours.
    pub euro_per_unit: f64,
    pub status: SolveStatus,
    /// Largest value of min(p_hp_up, p_hp_down) in the raw solution, pu.
    pub hp_overlap: f64,
}

/// Assembles the cone program for one slot.
pub fn build(problem: &CoordinationProblem) -> Result<CoordinationProgram, SocpError> {
    let grid = problem.grid;
    let topo = grid.topology()?;
    let nh = problem.households.len();
    if problem.schedule.len() != nh || problem.costs.households.len() != nh {
        return Err(SocpError::Build(format!(
            "{nh} households but {} schedules and {} cost entries",
            problem.schedule.len(),
            problem.costs.households.len()
        )));
    }
    for (h, hh) in problem.households.iter().enumerate() {
        match grid.buses.get(hh.bus).map(|b| b.kind) {
            Some(BusKind::Household(id)) if id == h => {}
            _ => {
                return Err(SocpError::Build(format!(
                    "household {h} references bus {} which is not its household bus",
                    hh.bus
                )))
            }
        }
    }
    if grid.n_households() != nh {
        return Err(SocpError::Build(format!(
            "grid has {} household buses, problem has {nh} households",
            grid.n_households()
        )));
    }

    let pu = |kw: f64| grid.power_to_pu(kw);
    let mut prog = ConicProgram::new();
    prog.euro_per_unit = grid.base_power * 1e-6 * problem.slot_hours;
    let margin = problem.limit_margin;

    // Network variables.
    let v: Vec<usize> = (0..grid.buses.len()).map(|b| prog.add_var(format!("v[{b}]"))).collect();
    let mut p_flow = Vec::new();
    let mut q_flow = Vec::new();
    let mut l = Vec::new();
    for line in &grid.lines {
        let tag = format!("({},{})", line.from, line.to);
        p_flow.push(prog.add_var(format!("P{tag}")));
        q_flow.push(prog.add_var(format!("Q{tag}")));
        l.push(prog.add_var(format!("l{tag}")));
    }

    // Households.
    let mut hvars = Vec::with_capacity(nh);
    for (h, (hh, sched)) in problem.households.iter().zip(problem.schedule).enumerate() {
        let par = &hh.params;
        let cost = &problem.costs.households[h];
        let p = prog.add_var(format!("p[{h}]"));
        let q = prog.add_var(format!("q[{h}]"));
        // p = p_pv - p_load - p_ev - p_hp ; q = q_pv + q_ev - q_hp - q_load
        let mut p_row = vec![(p, 1.0)];
        let mut q_row = vec![(q, 1.0)];

        let pv = par.has_pv().then(|| {
            let vars = PvVars {
                p: prog.add_var(format!("p_pv[{h}]")),
                q: prog.add_var(format!("q_pv[{h}]")),
                down: prog.add_var(format!("p_pv_down[{h}]")),
            };
            let s = prog.add_const(format!("S_pv[{h}]"), pu(par.pv_rating));
            prog.add_soc(vec![s, vars.p, vars.q]);
            prog.add_ge(format!("pf_pv_lo[{h}]"), &[(vars.q, 1.0), (vars.p, par.pv_tan_phi)], 0.0);
            prog.add_ge(format!("pf_pv_hi[{h}]"), &[(vars.q, -1.0), (vars.p, par.pv_tan_phi)], 0.0);
            prog.add_nonneg(vars.p);
            prog.add_eq(&[(vars.down, 1.0), (vars.p, 1.0)], pu(sched.p_pv_fore));
            prog.add_nonneg(vars.down);
            prog.set_cost(vars.down, cost.c_pv);
            p_row.push((vars.p, -1.0));
            q_row.push((vars.q, -1.0));
            vars
        });
        let pv_fixed = if pv.is_none() { pu(sched.p_pv_fore) } else { 0.0 };

        let ev = par.has_ev().then(|| {
            let vars = EvVars {
                p: prog.add_var(format!("p_ev[{h}]")),
                q: prog.add_var(format!("q_ev[{h}]")),
                down: prog.add_var(format!("p_ev_down[{h}]")),
            };
            let s = prog.add_const(format!("S_ev[{h}]"), pu(par.ev_rating));
            prog.add_soc(vec![s, vars.p, vars.q]);
            prog.add_ge(format!("pf_ev_lo[{h}]"), &[(vars.q, 1.0), (vars.p, par.ev_tan_phi)], 0.0);
            prog.add_ge(format!("pf_ev_hi[{h}]"), &[(vars.q, -1.0), (vars.p, par.ev_tan_phi)], 0.0);
            prog.add_nonneg(vars.p);
            prog.add_eq(&[(vars.down, 1.0), (vars.p, 1.0)], pu(sched.p_ev_max));
            prog.add_nonneg(vars.down);
            prog.set_cost(vars.down, cost.c_ev);
            p_row.push((vars.p, 1.0));
            q_row.push((vars.q, -1.0));
            vars
        });
        let ev_fixed = if ev.is_none() { pu(sched.p_ev_max) } else { 0.0 };

        let hp = par.has_hp().then(|| {
            let vars = HpVars {
                p: prog.add_var(format!("p_hp[{h}]")),
                q: prog.add_var(format!("q_hp[{h}]")),
                up: prog.add_var(format!("p_hp_up[{h}]")),
                down: prog.add_var(format!("p_hp_down[{h}]")),
            };
            prog.add_eq(&[(vars.q, 1.0), (vars.p, -par.hp_tan_phi)], 0.0);
            prog.add_nonneg(vars.p);
            prog.add_ge(format!("hp_cap[{h}]"), &[(vars.p, -1.0)], pu(par.hp_p_max));
            let set = pu(sched.p_hp_set);
            prog.add_nonneg(vars.down);
            prog.add_ge(format!("hp_down_def[{h}]"), &[(vars.down, 1.0), (vars.p, 1.0)], -set);
            prog.add_nonneg(vars.up);
            prog.add_ge(format!("hp_up_def[{h}]"), &[(vars.up, 1.0), (vars.p, -1.0)], set);
            prog.set_cost(vars.up, cost.c_hp_up);
            prog.set_cost(vars.down, cost.c_hp_down);
            p_row.push((vars.p, 1.0));
            q_row.push((vars.q, 1.0));
            vars
        });
        let hp_fixed = if hp.is_none() { pu(sched.p_hp_set) } else { 0.0 };
        let hp_q_fixed = hp_fixed * par.hp_tan_phi;

        prog.add_eq(&p_row, pv_fixed - pu(sched.p_load) - ev_fixed - hp_fixed);
        prog.add_eq(&q_row, -pu(sched.q_load) - hp_q_fixed);
        hvars.push(HouseholdVars { p, q, pv, ev, hp });
    }

    // Nodal balances for every non-slack bus.
    for bus in &grid.buses {
        if bus.id == topo.slack {
            continue;
        }
        let mut p_row = Vec::new();
        let mut q_row = Vec::new();
        if let Some(h) = bus.household() {
            p_row.push((hvars[h].p, -1.0));
            q_row.push((hvars[h].q, -1.0));
        }
        for &ci in &topo.child_lines[bus.id] {
            p_row.push((p_flow[ci], 1.0));
            q_row.push((q_flow[ci], 1.0));
        }
        if let Some(pi) = topo.parent_line[bus.id] {
            let line = &grid.lines[pi];
            p_row.extend([(p_flow[pi], -1.0), (l[pi], line.r)]);
            q_row.extend([(q_flow[pi], -1.0), (l[pi], line.x)]);
        }
        prog.add_eq(&p_row, 0.0);
        prog.add_eq(&q_row, 0.0);
    }

    prog.add_eq(&[(v[topo.slack], 1.0)], grid.slack_v);

    for (li, line) in grid.lines.iter().enumerate() {
        let (i, j) = line.endpoints();
        let z2 = line.r * line.r + line.x * line.x;
        // v_j = v_i - 2 (r P + x Q) + (r^2 + x^2) l
        prog.add_eq(
            &[
                (v[j], 1.0),
                (v[i], -1.0),
                (p_flow[li], 2.0 * line.r),
                (q_flow[li], 2.0 * line.x),
                (l[li], -z2),
            ],
            0.0,
        );
        // P^2 + Q^2 <= l v_i  <=>  ||(2P, 2Q, l - v_i)|| <= l + v_i
        let tag = format!("({i},{j})");
        let radius = prog.add_var(format!("cone_r{tag}"));
        let a = prog.add_var(format!("cone_2P{tag}"));
        let b = prog.add_var(format!("cone_2Q{tag}"));
        let c = prog.add_var(format!("cone_d{tag}"));
        prog.add_eq(&[(radius, 1.0), (l[li], -1.0), (v[i], -1.0)], 0.0);
        prog.add_eq(&[(a, 1.0), (p_flow[li], -2.0)], 0.0);
        prog.add_eq(&[(b, 1.0), (q_flow[li], -2.0)], 0.0);
        prog.add_eq(&[(c, 1.0), (l[li], -1.0), (v[i], 1.0)], 0.0);
        prog.add_soc(vec![radius, a, b, c]);

        prog.add_nonneg(l[li]);
        prog.add_ge(format!("l_max{tag}"), &[(l[li], -1.0)], line.l_max - margin);
        prog.set_cost(l[li], problem.costs.c_loss * line.r);
    }

    for bus in &grid.buses {
        if bus.id == topo.slack {
            continue;
        }
        prog.add_ge(format!("vmin[{}]", bus.id), &[(v[bus.id], 1.0)], -(bus.vmin + margin));
        prog.add_ge(format!("vmax[{}]", bus.id), &[(v[bus.id], -1.0)], bus.vmax - margin);
    }

    Ok(CoordinationProgram {
        program: prog,
        layout: Layout { households: hvars, v, p_flow, q_flow, l },
    })
}

/// Setpoints closer than this to a device bound (kW) are placed on the bound.
pub const SNAP_KW: f64 = 1e-6;

fn snap(x: f64, lo: f64, hi: f64) -> f64 {
    let x = x.clamp(lo, hi);
    if x - lo < SNAP_KW {
        lo
    } else if hi - x < SNAP_KW {
        hi
    } else {
        x
    }
}

/// Converts an optimal solution into setpoints and network quantities.
///
/// Setpoints are projected onto their device bounds (the interior-point
/// solution can sit within solver tolerance outside them); curtailments are
/// then recomputed from the projected setpoints so their defining equalities
/// hold exactly. The objective breakdown uses the raw solution so it sums to
/// the solver objective.
pub fn extract(
    problem: &CoordinationProblem,
    built: &CoordinationProgram,
    solution: &ConicSolution,
) -> Result<CoordinationResult, SocpError> {
    if solution.status != SolveStatus::Optimal {
        return Err(SocpError::NotOptimal(solution.status));
    }
    let x = &solution.x;
    let grid = problem.grid;
    let kw = |pu: f64| grid.power_to_kw(pu);
    let k = built.program.euro_per_unit;
    let costs = problem.costs;
    let layout = &built.layout;

    let mut breakdown = ObjectiveBreakdown::default();
    for (li, line) in grid.lines.iter().enumerate() {
        breakdown.loss += costs.c_loss * line.r * x[layout.l[li]] * k;
    }

    let mut setpoints = Vec::with_capacity(problem.households.len());
    let mut curtailments = Vec::with_capacity(problem.households.len());
    let mut hp_overlap: f64 = 0.0;
    for (h, hv) in layout.households.iter().enumerate() {
        let sched = &problem.schedule[h];
        let par = &problem.households[h].params;
        let c = &costs.households[h];
        let mut set = Setpoint::from_schedule(sched, par.hp_tan_phi);
        if let Some(pv) = hv.pv {
            breakdown.pv += c.c_pv * x[pv.down] * k;
            set.p_pv = snap(kw(x[pv.p]), 0.0, sched.p_pv_fore);
            let qmax = set.p_pv * par.pv_tan_phi;
            set.q_pv = kw(x[pv.q]).clamp(-qmax, qmax);
        }
        if let Some(ev) = hv.ev {
            breakdown.ev += c.c_ev * x[ev.down] * k;
            set.p_ev = snap(kw(x[ev.p]), 0.0, sched.p_ev_max);
            let qmax = set.p_ev * par.ev_tan_phi;
            set.q_ev = kw(x[ev.q]).clamp(-qmax, qmax);
        }
        if let Some(hp) = hv.hp {
            breakdown.hp_up += c.c_hp_up * x[hp.up] * k;
            breakdown.hp_down += c.c_hp_down * x[hp.down] * k;
            hp_overlap = hp_overlap.max(x[hp.up].min(x[hp.down]));
            let p = kw(x[hp.p]).clamp(0.0, par.hp_p_max);
            set.p_hp = if (p - sched.p_hp_set).abs() < SNAP_KW { sched.p_hp_set } else { p };
            set.q_hp = set.p_hp * par.hp_tan_phi;
        }
        curtailments.push(Curtailment::of(&set, sched));
        setpoints.push(set);
    }
    if hp_overlap > 1e-7 {
        log::warn!("heat-pump up and down regulation both active ({hp_overlap:.3e} pu)");
    }

    let pick = |idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
    Ok(CoordinationResult {
        setpoints,
        curtailments,
        v: pick(&layout.v),
        p_flow: pick(&layout.p_flow),
        q_flow: pick(&layout.q_flow),
        l: pick(&layout.l),
        objective_eur: solution.objective * k,
        breakdown,
        euro_per_unit: k,
        status: solution.status,
        hp_overlap,
    })
}

/// `l v_from - (P^2 + Q^2)` per line; zero where the relaxation is exact.
pub fn relaxation_gap(grid: &Grid, result: &CoordinationResult) -> Vec<f64> {
    grid.lines
        .iter()
        .enumerate()
        .map(|(li, line)| {
            let (p, q) = (result.p_flow[li], result.q_flow[li]);
            result.l[li] * result.v[line.from] - (p * p + q * q)
        })
        .collect()
}
