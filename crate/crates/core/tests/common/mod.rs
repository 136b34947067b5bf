//! Helpers shared by the integration tests.
//!
//! `brute_force` is the reference oracle for the coordination model: it
//! enumerates device setpoints on a 0.05 kW lattice for a two-household
//! instance, runs the exact power flow for each candidate, discards candidates
//! that breach a limit and keeps the cheapest one. Because it evaluates the
//! exact (non-relaxed) network, its optimum bounds the relaxed optimum from
//! above, up to the lattice resolution.

#![allow(dead_code)]

use dercoord::der::{
    CostTerms, DeviceSchedule, Household, HouseholdCosts, HouseholdParams, HouseholdState,
};
use dercoord::grid::{Bus, BusKind, Grid, Line};
use dercoord::powerflow::{self, Injection};
use dercoord::scenario::{uncontrolled_charging, Profile, Scenario};
use dercoord::socp::Setpoint;

pub const BASE_VA: f64 = 1e5;
pub const BASE_V: f64 = 400.0;
pub const SLOT_HOURS: f64 = 0.25;

/// Grid in per-unit. Bus 0 is the slack; `households[h]` is the bus of
/// household `h`; every other bus is a junction.
pub fn grid(n_buses: usize, lines: &[(usize, usize, f64, f64, f64)], households: &[usize]) -> Grid {
    let buses = (0..n_buses)
        .map(|b| {
            let kind = if b == 0 {
                BusKind::Slack
            } else if let Some(h) = households.iter().position(|&hb| hb == b) {
                BusKind::Household(h)
            } else {
                BusKind::Junction
            };
            Bus::new(b, kind)
        })
        .collect();
    let lines = lines
        .iter()
        .map(|&(from, to, r, x, l_max)| Line { from, to, r, x, l_max })
        .collect();
    let g = Grid::new(buses, lines, BASE_VA, BASE_V, 1.0);
    g.ensure_valid().expect("test grid is valid");
    g
}

/// Slack feeding a single household bus.
pub fn two_bus(r: f64, x: f64) -> Grid {
    grid(2, &[(0, 1, r, x, 1.0)], &[1])
}

pub fn households(grid: &Grid, params: &[HouseholdParams]) -> Vec<Household> {
    params
        .iter()
        .enumerate()
        .map(|(h, p)| Household { bus: grid.bus_of_household(h).unwrap(), params: p.clone() })
        .collect()
}

/// EV-only household with a unity power factor charger.
pub fn ev_only(p_max: f64) -> HouseholdParams {
    HouseholdParams {
        ev_rating: p_max,
        ev_charger_p_max: p_max,
        ev_tan_phi: 0.0,
        ev_capacity: 7.5,
        ..HouseholdParams::passive()
    }
}

pub fn ev_and_hp(ev_max: f64, hp_max: f64) -> HouseholdParams {
    HouseholdParams { hp_p_max: hp_max, ..ev_only(ev_max) }
}

pub fn load_injections(grid: &Grid, loads_kw: &[(usize, f64, f64)]) -> Vec<Injection> {
    loads_kw
        .iter()
        .map(|&(bus, p, q)| Injection { bus, p: -grid.power_to_pu(p), q: -grid.power_to_pu(q) })
        .collect()
}

pub fn costs(c_loss: f64, per: &[(f64, f64, f64, f64)]) -> CostTerms {
    CostTerms {
        c_loss,
        households: per
            .iter()
            .map(|&(c_pv, c_ev, c_hp_up, c_hp_down)| HouseholdCosts { c_pv, c_ev, c_hp_up, c_hp_down })
            .collect(),
    }
}

/// The two-household oracle instance: a two-section chain, household A at
/// bus 1 with a 3.0 kW EV and a 1.0 kW heat pump, household B at bus 2 with a
/// 3.0 kW EV. The first section's ampacity holds the total well below the
/// scheduled demand.
pub struct OracleInstance {
    pub grid: Grid,
    pub households: Vec<Household>,
    pub schedule: Vec<DeviceSchedule>,
}

pub fn oracle_instance() -> OracleInstance {
    let l_max = 0.045 * 0.045;
    let grid = grid(3, &[(0, 1, 0.05, 0.02, l_max), (1, 2, 0.05, 0.02, 1.0)], &[1, 2]);
    let households = households(&grid, &[ev_and_hp(3.0, 1.0), ev_only(3.0)]);
    let schedule = vec![
        DeviceSchedule { p_load: 0.4, q_load: 0.1, p_ev_max: 3.0, p_hp_set: 1.0, p_hp_base: 1.0, ..Default::default() },
        DeviceSchedule { p_load: 0.3, q_load: 0.05, p_ev_max: 3.0, ..Default::default() },
    ];
    OracleInstance { grid, households, schedule }
}

pub const LATTICE_KW: f64 = 0.05;

fn lattice(max: f64) -> impl Iterator<Item = f64> {
    let n = (max / LATTICE_KW).round() as usize;
    (0..=n).map(|i| i as f64 * LATTICE_KW)
}

/// Cheapest feasible lattice point of the oracle instance, EUR for one slot.
pub fn brute_force(inst: &OracleInstance, costs: &CostTerms) -> Option<(f64, Vec<Setpoint>)> {
    let g = &inst.grid;
    let (a, b) = (&inst.households[0], &inst.households[1]);
    let (sa, sb) = (&inst.schedule[0], &inst.schedule[1]);
    let k = g.base_power * 1e-6 * SLOT_HOURS;
    let pu = |kw: f64| g.power_to_pu(kw);
    let mut best: Option<(f64, Vec<Setpoint>)> = None;
    for ev_a in lattice(sa.p_ev_max) {
        for hp_a in lattice(a.params.hp_p_max) {
            for ev_b in lattice(sb.p_ev_max) {
                let set_a = Setpoint {
                    p_ev: ev_a,
                    p_hp: hp_a,
                    q_hp: hp_a * a.params.hp_tan_phi,
                    ..Default::default()
                };
                let set_b = Setpoint { p_ev: ev_b, ..Default::default() };
                let (pa, qa) = set_a.injection(sa);
                let (pb, qb) = set_b.injection(sb);
                let inj = [
                    Injection { bus: a.bus, p: pu(pa), q: pu(qa) },
                    Injection { bus: b.bus, p: pu(pb), q: pu(qb) },
                ];
                let flow = powerflow::solve(g, &inj).expect("oracle power flow");
                if !powerflow::check_limits(g, &flow).expect("converged").is_empty() {
                    continue;
                }
                let loss: f64 = g.lines.iter().zip(&flow.l).map(|(line, l)| line.r * l).sum();
                let ca = &costs.households[0];
                let cb = &costs.households[1];
                let obj = costs.c_loss * loss
                    + ca.c_ev * pu(sa.p_ev_max - ev_a)
                    + ca.c_hp_up * pu((hp_a - sa.p_hp_set).max(0.0))
                    + ca.c_hp_down * pu((sa.p_hp_set - hp_a).max(0.0))
                    + cb.c_ev * pu(sb.p_ev_max - ev_b);
                let obj = obj * k;
                if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                    best = Some((obj, vec![set_a, set_b]));
                }
            }
        }
    }
    best
}

/// Two identical EVs on identical branches behind a shared first section.
/// Only their initial state of charge differs.
pub fn symmetric_pair() -> (Scenario, usize) {
    let slots = 24;
    let dt = 0.25;
    // Shared section carries at most about 5 kVA.
    let g = grid(4, &[(0, 1, 0.01, 0.004, 0.05 * 0.05), (1, 2, 0.02, 0.008, 1.0), (1, 3, 0.02, 0.008, 1.0)], &[2, 3]);
    let hh = households(&g, &[ev_only(3.68), ev_only(3.68)]);
    let socs = [0.2, 0.6];
    let mut initial = Vec::new();
    let mut profiles = Vec::new();
    for (h, soc) in socs.iter().enumerate() {
        let mut st = HouseholdState::new(0, slots);
        st.ev_soc = *soc;
        initial.push(st);
        let need = (1.0 - soc) * hh[h].params.ev_capacity / hh[h].params.ev_efficiency;
        let p_ev = uncontrolled_charging(slots, dt, 0, 3.68, need);
        profiles.push(Profile {
            p_load: vec![0.3; slots],
            q_load: vec![0.0; slots],
            p_pv: vec![0.0; slots],
            p_ev,
            p_hp: vec![0.0; slots],
        });
    }
    let sc = Scenario { grid: g, households: hh, profiles, initial_states: initial, slots, slot_hours: dt };
    sc.check().unwrap();
    (sc, slots)
}
