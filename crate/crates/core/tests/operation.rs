mod common;

use common::symmetric_pair;
use dercoord::der::{DeviceSchedule, ScheduleSlot};
use dercoord::operation::{GridStateSource, Mode, SimConfig, Simulator, SlotRecord};
use dercoord::powerflow::{self, Injection};
use dercoord::report::{summarize, FULL_SOC_TOL};
use dercoord::scenario::{acceptance_feeder, benign_config, generate, Scenario};

fn run(sc: &Scenario, mode: Mode) -> Vec<SlotRecord> {
    let sim = Simulator::new(&sc.grid, &sc.households, SimConfig { mode, ..Default::default() });
    sim.run_horizon(&sc.initial_states, &sc.schedule()).unwrap()
}

#[test]
fn benign_day_needs_no_coordination() {
    let sc = generate(&benign_config()).unwrap();
    let recs = run(&sc, Mode::Coordinated);
    assert!(recs.iter().all(|r| r.pre_violations.is_empty() && !r.coordinated));
    let s = summarize(&recs, &sc.grid, &sc.households).unwrap();
    assert_eq!(s.ev_satisfaction, 1.0);
    assert_eq!(s.max_abs_tank_dt_c, 0.0);
    assert!(s.relaxation.is_none());
}

#[test]
fn coordinated_day_resolves_every_violation() {
    let sc = acceptance_feeder();
    let recs = run(&sc, Mode::Coordinated);
    assert!(recs.iter().any(|r| r.coordinated));
    for r in &recs {
        assert!(!r.unresolved);
        assert!(r.post_violations.is_empty(), "slot {}: {:?}", r.slot, r.post_violations);
        assert_eq!(r.grid_state_source, GridStateSource::PowerFlow);
    }
}

#[test]
fn every_ev_draws_exactly_its_energy() {
    let sc = acceptance_feeder();
    for mode in [Mode::Uncontrolled, Mode::Coordinated] {
        let recs = run(&sc, mode);
        for (h, hh) in sc.households.iter().enumerate() {
            let drawn: f64 = recs.iter().map(|r| r.setpoints[h].p_ev * r.slot_hours).sum();
            let need = (1.0 - sc.initial_states[h].ev_soc) * hh.params.ev_capacity / hh.params.ev_efficiency;
            assert!((drawn - need).abs() <= 1e-6, "{mode:?} household {h}: {drawn} vs {need}");
            assert!(recs.last().unwrap().states_after[h].ev_soc >= 1.0 - FULL_SOC_TOL);
        }
    }
}

#[test]
fn verification_flow_is_reproducible() {
    let sc = acceptance_feeder();
    let sched = sc.schedule();
    let recs = run(&sc, Mode::Coordinated);
    let rec = recs.iter().find(|r| r.coordinated).unwrap();
    let inj: Vec<Injection> = sc
        .households
        .iter()
        .zip(&rec.setpoints)
        .zip(&sched[rec.slot].households)
        .map(|((hh, set), ds)| {
            let (p, q) = set.injection(ds);
            Injection { bus: hh.bus, p: sc.grid.power_to_pu(p), q: sc.grid.power_to_pu(q) }
        })
        .collect();
    // Catch-up only rewrites device intents; loads come from the original
    // schedule, so the applied injections are reproducible from it.
    let again = powerflow::solve(&sc.grid, &inj).unwrap();
    assert_eq!(again, rec.applied_flow);
}

#[test]
fn runs_are_deterministic() {
    let sc = acceptance_feeder();
    let a = run(&sc, Mode::Coordinated);
    let b = run(&sc, Mode::Coordinated);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.setpoints, y.setpoints);
        assert_eq!(x.applied_flow, y.applied_flow);
        assert_eq!(x.states_after, y.states_after);
    }
}

#[test]
fn lower_charge_gets_priority() {
    let (sc, slots) = symmetric_pair();
    let mut config = SimConfig::default();
    config.costs.t_max = slots;
    let sim = Simulator::new(&sc.grid, &sc.households, config);
    let recs = sim.run_horizon(&sc.initial_states, &sc.schedule()).unwrap();
    assert!(recs.iter().any(|r| r.coordinated));
    let mut states = sc.initial_states.clone();
    for r in &recs {
        if r.coordinated {
            let (lo, hi) = if states[0].ev_soc <= states[1].ev_soc { (0, 1) } else { (1, 0) };
            assert!(
                r.setpoints[lo].p_ev >= r.setpoints[hi].p_ev - 1e-6,
                "slot {}: {:?}",
                r.slot,
                r.setpoints
            );
        }
        states = r.states_after.clone();
    }
    let s = summarize(&recs, &sc.grid, &sc.households).unwrap();
    assert_eq!(s.ev_satisfaction, 1.0);
    assert_eq!(s.violation_slots, 0);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let sc = acceptance_feeder();
    let sim = Simulator::new(&sc.grid, &sc.households, SimConfig::default());
    let mut states = sc.initial_states.clone();
    let short = ScheduleSlot { households: vec![DeviceSchedule::default(); 3] };
    assert!(sim.run_slot(0, &mut states, &short).is_err());
}
