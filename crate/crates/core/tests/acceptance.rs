//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::{brute_force, costs, oracle_instance, symmetric_pair, two_bus, SLOT_HOURS};
use dercoord::der::{self, CostConfig, DeviceSchedule, Household};
use dercoord::operation::{Mode, SimConfig, Simulator, SlotRecord};
use dercoord::powerflow::{self, Injection};
use dercoord::report::{emit, summarize, RunSummary, FULL_SOC_TOL};
use dercoord::scenario::{acceptance_feeder, Scenario};
use dercoord::socp::{self, ClarabelBackend, CoordinationProblem, CoordinationResult, SolverSettings};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Day {
    scenario: Scenario,
    uncontrolled: (Vec<SlotRecord>, RunSummary),
    coordinated: (Vec<SlotRecord>, RunSummary),
    coordinated_secs: f64,
}

fn run(sc: &Scenario, mode: Mode) -> (Vec<SlotRecord>, RunSummary) {
    let sim = Simulator::new(&sc.grid, &sc.households, SimConfig { mode, ..Default::default() });
    let recs = sim.run_horizon(&sc.initial_states, &sc.schedule()).expect("simulation runs");
    let summary = summarize(&recs, &sc.grid, &sc.households).expect("summary");
    (recs, summary)
}

fn acceptance_day() -> Day {
    let scenario = acceptance_feeder();
    let uncontrolled = run(&scenario, Mode::Uncontrolled);
    let start = Instant::now();
    let coordinated = run(&scenario, Mode::Coordinated);
    let coordinated_secs = start.elapsed().as_secs_f64();
    Day { scenario, uncontrolled, coordinated, coordinated_secs }
}

fn violation_restoration(day: &Day) -> Outcome {
    let u = &day.uncontrolled.1;
    let (recs, c) = &day.coordinated;
    ensure(u.under_voltage_slots >= 1, || "uncontrolled run has no under-voltage slot".into())?;
    ensure(u.overload_slots >= 1, || "uncontrolled run has no overload slot".into())?;
    ensure(c.min_voltage_pu >= 0.9 - 5e-4, || format!("coordinated min voltage {:.6} pu", c.min_voltage_pu))?;
    for r in recs {
        let worst = r.applied_flow.loading_pct(&day.scenario.grid).into_iter().fold(0.0, f64::max);
        ensure(worst <= 100.0, || format!("slot {} loading {worst:.4}%", r.slot))?;
    }
    ensure(day.coordinated_secs < 60.0, || format!("coordinated day took {:.1} s", day.coordinated_secs))?;
    Ok(format!(
        "uncontrolled {} under-voltage / {} overload slots, min {:.4} pu; coordinated min {:.4} pu, max loading {:.2}%, {} coordinated slots in {:.2} s",
        u.under_voltage_slots,
        u.overload_slots,
        u.min_voltage_pu,
        c.min_voltage_pu,
        c.max_loading_pct,
        c.coordinated_slots,
        day.coordinated_secs
    ))
}

fn ev_satisfaction(day: &Day) -> Outcome {
    let (recs, _) = &day.coordinated;
    let mut worst: f64 = 1.0;
    for (h, hh) in day.scenario.households.iter().enumerate() {
        if !hh.params.has_ev() {
            continue;
        }
        let dep = day.scenario.initial_states[h].ev_departure_slot;
        let rec = recs.iter().find(|r| r.slot + 1 == dep).unwrap_or_else(|| recs.last().unwrap());
        let soc = rec.states_after[h].ev_soc;
        worst = worst.min(soc);
        ensure(soc >= 1.0 - FULL_SOC_TOL, || format!("household {h} leaves at soc {soc:.9}"))?;
    }
    Ok(format!("lowest soc at departure {worst:.9}"))
}

fn tank_satisfaction(day: &Day) -> Outcome {
    let (recs, _) = &day.coordinated;
    let mut worst: f64 = 0.0;
    for r in recs {
        for (st, hh) in r.states_after.iter().zip(&day.scenario.households) {
            if hh.params.has_hp() {
                worst = worst.max(st.tank_dt.abs());
            }
        }
    }
    ensure(worst <= 5.0, || format!("tank deviation reached {worst:.4} degC"))?;
    Ok(format!("max |tank dT| {worst:.4} degC"))
}

fn relaxation_accuracy(day: &Day) -> Outcome {
    let (recs, _) = &day.coordinated;
    let (mut dv, mut lo, mut gap) = (0.0f64, f64::INFINITY, f64::INFINITY);
    let mut n = 0;
    for r in recs.iter().filter(|r| r.coordinated) {
        let d = r.diagnostics.as_ref().ok_or("coordinated slot without diagnostics")?;
        n += 1;
        dv = dv.max(d.max_voltage_discrepancy());
        lo = lo.min(d.min_loading_overestimate());
        gap = gap.min(d.min_gap());
    }
    ensure(n > 0, || "no coordinated slot".into())?;
    ensure(dv <= 1e-3, || format!("voltage discrepancy {dv:.3e} pu"))?;
    ensure(lo >= -1e-6, || format!("current under-estimated by {:.3e} pu^2", -lo))?;
    ensure(gap >= -1e-7, || format!("relaxation gap {gap:.3e}"))?;
    Ok(format!("{n} slots: max |dv| {dv:.2e} pu, min l overestimate {lo:.2e}, min gap {gap:.2e}"))
}

/// Smaller root of `(r^2+x^2) l^2 + (2ar + 2bx - v0) l + a^2 + b^2 = 0`.
fn single_line(r: f64, x: f64, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let (qa, qb, qc) = (r * r + x * x, 2.0 * a * r + 2.0 * b * x - 1.0, a * a + b * b);
    let l = 2.0 * qc / (-qb + (qb * qb - 4.0 * qa * qc).sqrt());
    let (p, q) = (a + r * l, b + x * l);
    (1.0 - 2.0 * (r * p + x * q) + qa * l, p, q, l)
}

fn powerflow_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(r, x, a, b) in &[(0.02, 0.01, 0.1, 0.03), (0.05, 0.02, 0.3, 0.1), (0.1, 0.05, -0.2, 0.0), (0.2, 0.1, 0.8, 0.3)] {
        let res = powerflow::solve(&two_bus(r, x), &[Injection { bus: 1, p: -a, q: -b }]).map_err(|e| e.to_string())?;
        let (v, p, q, l) = single_line(r, x, a, b);
        for err in [res.v[1] - v, res.p[0] - p, res.q[0] - q, res.l[0] - l] {
            worst = worst.max(err.abs());
        }
    }
    ensure(worst <= 1e-10, || format!("deviation from closed form {worst:.3e}"))?;
    let sc = acceptance_feeder();
    let flat = powerflow::solve(&sc.grid, &[]).map_err(|e| e.to_string())?;
    let flat_err = flat
        .v
        .iter()
        .map(|v| (v - sc.grid.slack_v).abs())
        .chain(flat.p.iter().chain(&flat.q).chain(&flat.l).map(|x| x.abs()))
        .fold(0.0, f64::max);
    ensure(flat_err <= 1e-12, || format!("flat profile off by {flat_err:.3e}"))?;
    Ok(format!("closed-form deviation {worst:.2e}, flat deviation {flat_err:.2e}"))
}

fn solve(
    grid: &dercoord::grid::Grid,
    households: &[Household],
    schedule: &[DeviceSchedule],
    c: &der::CostTerms,
) -> Result<CoordinationResult, String> {
    let problem = CoordinationProblem { grid, households, schedule, costs: c, slot_hours: SLOT_HOURS, limit_margin: 1e-6 };
    let (sol, res) = socp::coordinate(&problem, &ClarabelBackend::new(SolverSettings::default()))
        .map_err(|e| e.to_string())?;
    res.ok_or_else(|| format!("solver status {:?}", sol.status))
}

fn model_fidelity(day: &Day) -> Outcome {
    let sc = &day.scenario;
    let schedule = sc.schedule();

    // (a) prohibitive deviation costs on a feasible slot.
    let feasible = day.uncontrolled.0.iter().find(|r| r.pre_violations.is_empty() && r.slot >= 8).ok_or("no feasible slot")?;
    let c = costs(32.0, &vec![(1e6, 1e6, 1e6, 1e6); sc.households.len()]);
    let res = solve(&sc.grid, &sc.households, &schedule[feasible.slot].households, &c)?;
    let max_curt = res
        .curtailments
        .iter()
        .flat_map(|c| [c.ev_down, c.pv_down, c.hp_up, c.hp_down])
        .fold(0.0f64, |m, x| m.max(x.abs()));
    ensure(max_curt <= 1e-6, || format!("(a) curtailment {max_curt:.3e} kW"))?;

    // (b) cost scaling on the first violating slot.
    let (t, before) = {
        let sim = Simulator::new(&sc.grid, &sc.households, SimConfig { mode: Mode::Uncontrolled, ..Default::default() });
        let mut states = sc.initial_states.clone();
        let mut found = None;
        for (t, slot) in schedule.iter().enumerate() {
            let before = states.clone();
            let rec = sim.run_slot(t, &mut states, slot).map_err(|e| e.to_string())?;
            if !rec.pre_violations.is_empty() {
                found = Some((t, before));
                break;
            }
        }
        found.ok_or("no violating slot")?
    };
    let c = der::cost_terms(&CostConfig::default(), &sc.households, &before, t).map_err(|e| e.to_string())?;
    let base = solve(&sc.grid, &sc.households, &schedule[t].households, &c)?;
    let mut max_shift: f64 = 0.0;
    for k in [0.1, 7.0, 1000.0] {
        let scaled = solve(&sc.grid, &sc.households, &schedule[t].households, &c.scaled(k))?;
        for (a, b) in base.setpoints.iter().zip(&scaled.setpoints) {
            for d in [a.p_ev - b.p_ev, a.p_hp - b.p_hp, a.p_pv - b.p_pv] {
                max_shift = max_shift.max(d.abs());
            }
        }
    }
    ensure(max_shift <= 1e-5, || format!("(b) setpoints moved {max_shift:.3e} kW under scaling"))?;

    // (c) symmetric pair: the emptier battery is never served less.
    let (pair, slots) = symmetric_pair();
    let mut config = SimConfig::default();
    config.costs.t_max = slots;
    let recs = Simulator::new(&pair.grid, &pair.households, config)
        .run_horizon(&pair.initial_states, &pair.schedule())
        .map_err(|e| e.to_string())?;
    let mut states = pair.initial_states.clone();
    let mut coordinated = 0;
    for r in &recs {
        if r.coordinated {
            coordinated += 1;
            let (lo, hi) = if states[0].ev_soc <= states[1].ev_soc { (0, 1) } else { (1, 0) };
            ensure(r.setpoints[lo].p_ev >= r.setpoints[hi].p_ev - 1e-6, || {
                format!("(c) slot {}: lower-soc EV gets {:.6} kW, other {:.6} kW", r.slot, r.setpoints[lo].p_ev, r.setpoints[hi].p_ev)
            })?;
        }
        states = r.states_after.clone();
    }
    ensure(coordinated > 0, || "(c) symmetric instance never coordinated".into())?;

    // (d) exhaustive lattice search.
    let inst = oracle_instance();
    let c = costs(32.0, &[(200.0, 12.0, 10.0, 10.0), (200.0, 15.0, 0.0, 0.0)]);
    let res = solve(&inst.grid, &inst.households, &inst.schedule, &c)?;
    let (bf, _) = brute_force(&inst, &c).ok_or("(d) no feasible lattice point")?;
    let rel = (bf - res.objective_eur) / res.objective_eur;
    ensure(rel.abs() <= 0.02, || format!("(d) lattice optimum {bf:.6} EUR vs model {:.6} EUR", res.objective_eur))?;

    Ok(format!(
        "(a) max curtailment {max_curt:.1e} kW; (b) max shift {max_shift:.1e} kW; (c) {coordinated} slots ordered; (d) lattice/model gap {:.3}%",
        rel * 100.0
    ))
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        let sc = acceptance_feeder();
        let (recs, s) = run(&sc, Mode::Coordinated);
        emit(&s, &recs, &sc.grid, d.path()).map_err(|e| e.to_string())?;
    }
    let names = ["summary.json", "slots.csv", "cdf_voltage.csv", "cdf_loading.csv"];
    for name in names {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical", names.len()))
}

fn cost_formulas() -> Outcome {
    let t_max = 96;
    let mut n = 0;
    for i in 0..10 {
        let soc = i as f64 / 9.0;
        for j in 0..10 {
            let t = 1 + j * 10;
            let expected = 1440.0 * (1.0 - soc) / (t_max - t + 1) as f64;
            let got = der::ev_cost(soc, t, t_max, 1440.0).map_err(|e| e.to_string())?;
            ensure(got == expected, || format!("ev_cost({soc}, {t}) = {got}, expected {expected}"))?;
            n += 1;
        }
    }
    for i in 0..100 {
        let dt = -7.5 + 15.0 * i as f64 / 99.0;
        let band = 5.0;
        let up = f64::max(10.0, 150.0 * dt / band);
        let down = f64::max(10.0, -150.0 * dt / band);
        let got = der::hp_costs(dt, band);
        ensure(got == (up, down), || format!("hp_costs({dt}) = {got:?}, expected ({up}, {down})"))?;
        n += 1;
    }
    Ok(format!("{n} points exact"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({detail})");
            }
        }
    };

    let day = panic::catch_unwind(acceptance_day).ok();
    let need_day = |f: fn(&Day) -> Outcome| {
        let day = day.as_ref();
        move || day.map_or_else(|| Err("acceptance day simulation failed".into()), f)
    };
    report("1", "violation restoration", &mut need_day(violation_restoration));
    report("2", "EV satisfaction", &mut need_day(ev_satisfaction));
    report("3", "tank satisfaction", &mut need_day(tank_satisfaction));
    report("4", "relaxation accuracy", &mut need_day(relaxation_accuracy));
    report("5", "power-flow oracle", &mut powerflow_oracle);
    report("6", "model fidelity", &mut need_day(model_fidelity));
    report("7", "determinism", &mut determinism);
    report("8", "cost formulas", &mut cost_formulas);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
