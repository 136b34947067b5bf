//! The per-slot operating loop: evaluate the scheduled grid state, coordinate
//! devices when limits are breached, verify the setpoints with an exact power
//! flow, apply them and advance device states. Between slots, curtailed
//! energy is rescheduled into later slots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{
    self, CostConfig, DerError, Household, HouseholdState, ScheduleSlot,
};
use crate::grid::Grid;
use crate::powerflow::{self, Injection, LimitViolation, PowerFlowError, PowerFlowResult};
use crate::socp::{
    self, relaxation_gap, ClarabelBackend, ConicSolver, CoordinationProblem, Curtailment,
    ObjectiveBreakdown, Setpoint, SocpError, SolveStatus, SolverSettings,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("slot {slot}: power flow failed: {source}")]
    PowerFlow { slot: usize, source: PowerFlowError },
    #[error("slot {slot}: device update failed: {source}")]
    Der { slot: usize, source: DerError },
    #[error("slot {slot}: coordination failed: {source}")]
    Socp { slot: usize, source: SocpError },
    #[error("inconsistent inputs: {0}")]
    Inputs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Apply schedules as collected, never intervene.
    Uncontrolled,
    /// Coordinate devices whenever a limit is breached.
    Coordinated,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uncontrolled" => Ok(Mode::Uncontrolled),
            "coordinated" => Ok(Mode::Coordinated),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mode: Mode,
    pub costs: CostConfig,
    /// Heat-pump coefficient of performance used by the tank model.
    pub cop: f64,
    pub slot_hours: f64,
    /// Limit tightening inside the coordination model, pu^2.
    pub limit_margin: f64,
    pub solver: SolverSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Coordinated,
            costs: CostConfig::default(),
            cop: 3.0,
            slot_hours: 0.25,
            limit_margin: 1e-6,
            solver: SolverSettings::default(),
        }
    }
}

/// Where reported grid states come from. Only power-flow results are ever
/// recorded as grid state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStateSource {
    PowerFlow,
}

/// Comparison between the coordination model's network state and the
/// verifying power flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationDiagnostics {
    pub objective_eur: f64,
    pub breakdown: ObjectiveBreakdown,
    /// Per bus, `|sqrt(v_model) - sqrt(v_pf)|`, pu.
    pub voltage_discrepancy_pu: Vec<f64>,
    /// Per line, `l_model - l_pf`, pu^2.
    pub loading_overestimate: Vec<f64>,
    /// Per line, `l v_from - (P^2 + Q^2)` of the model solution, pu^2.
    pub relaxation_gaps: Vec<f64>,
    pub hp_overlap: f64,
    pub solver_iterations: u32,
    pub solve_time_s: f64,
}

impl CoordinationDiagnostics {
    pub fn max_voltage_discrepancy(&self) -> f64 {
        self.voltage_discrepancy_pu.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn min_loading_overestimate(&self) -> f64 {
        self.loading_overestimate.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn min_gap(&self) -> f64 {
        self.relaxation_gaps.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn max_gap(&self) -> f64 {
        self.relaxation_gaps.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub slot_hours: f64,
    pub pre_violations: Vec<LimitViolation>,
    /// Violations of the applied state; equal to `pre_violations` when the
    /// slot was not coordinated.
    pub post_violations: Vec<LimitViolation>,
    pub coordinated: bool,
    /// A violation was found but the coordination model gave no usable answer.
    pub unresolved: bool,
    pub solver_status: Option<SolveStatus>,
    pub setpoints: Vec<Setpoint>,
    pub curtailments: Vec<Curtailment>,
    pub states_after: Vec<HouseholdState>,
    /// Power flow of the scheduled injections.
    pub scheduled_flow: PowerFlowResult,
    /// Power flow of the applied setpoints.
    pub applied_flow: PowerFlowResult,
    pub grid_state_source: GridStateSource,
    pub diagnostics: Option<CoordinationDiagnostics>,
}

/// Runs slots against a fixed grid and fleet.
pub struct Simulator<'a> {
    pub grid: &'a Grid,
    pub households: &'a [Household],
    pub config: SimConfig,
    solver: Box<dyn ConicSolver + 'a>,
}

impl<'a> Simulator<'a> {
    pub fn new(grid: &'a Grid, households: &'a [Household], config: SimConfig) -> Self {
        let solver = Box::new(ClarabelBackend::new(config.solver));
        Self { grid, households, config, solver }
    }

    pub fn with_solver(mut self, solver: Box<dyn ConicSolver + 'a>) -> Self {
        self.solver = solver;
        self
    }

    fn injections(&self, setpoints: &[Setpoint], sched: &ScheduleSlot) -> Vec<Injection> {
        self.households
            .iter()
            .zip(setpoints)
            .zip(&sched.households)
            .map(|((hh, set), ds)| {
                let (p, q) = set.injection(ds);
                Injection {
                    bus: hh.bus,
                    p: self.grid.power_to_pu(p),
                    q: self.grid.power_to_pu(q),
                }
            })
            .collect()
    }

    fn flow(&self, slot: usize, inj: &[Injection]) -> Result<PowerFlowResult, SimError> {
        let res = powerflow::solve(self.grid, inj)
            .map_err(|source| SimError::PowerFlow { slot, source })?;
        if !res.converged {
            return Err(SimError::PowerFlow {
                slot,
                source: PowerFlowError::NotConverged(res.iterations),
            });
        }
        Ok(res)
    }

    /// One operating step. `states` are advanced in place.
    pub fn run_slot(
        &self,
        slot: usize,
        states: &mut [HouseholdState],
        sched: &ScheduleSlot,
    ) -> Result<SlotRecord, SimError> {
        let nh = self.households.len();
        if states.len() != nh || sched.households.len() != nh {
            return Err(SimError::Inputs(format!(
                "{nh} households, {} states, {} schedules",
                states.len(),
                sched.households.len()
            )));
        }
        for (st, hh) in states.iter_mut().zip(self.households) {
            st.ev_present = hh.params.has_ev() && st.ev_connected_at(slot);
        }

        let scheduled: Vec<Setpoint> = self
            .households
            .iter()
            .zip(&sched.households)
            .map(|(hh, ds)| Setpoint::from_schedule(ds, hh.params.hp_tan_phi))
            .collect();
        let scheduled_flow = self.flow(slot, &self.injections(&scheduled, sched))?;
        let pre_violations = powerflow::check_limits(self.grid, &scheduled_flow)
            .map_err(|source| SimError::PowerFlow { slot, source })?;

        let mut setpoints = scheduled;
        let mut applied_flow = scheduled_flow.clone();
        let mut post_violations = pre_violations.clone();
        let mut coordinated = false;
        let mut unresolved = false;
        let mut solver_status = None;
        let mut diagnostics = None;

        if !pre_violations.is_empty() && self.config.mode == Mode::Coordinated {
            let costs = der::cost_terms(&self.config.costs, self.households, states, slot)
                .map_err(|source| SimError::Der { slot, source })?;
            let problem = CoordinationProblem {
                grid: self.grid,
                households: self.households,
                schedule: &sched.households,
                costs: &costs,
                slot_hours: self.config.slot_hours,
                limit_margin: self.config.limit_margin,
            };
            let (solution, result) = socp::coordinate(&problem, self.solver.as_ref())
                .map_err(|source| SimError::Socp { slot, source })?;
            solver_status = Some(solution.status);
            match result {
                Some(result) => {
                    coordinated = true;
                    let flow = self.flow(slot, &self.injections(&result.setpoints, sched))?;
                    post_violations = powerflow::check_limits(self.grid, &flow)
                        .map_err(|source| SimError::PowerFlow { slot, source })?;
                    let voltage_discrepancy_pu = result
                        .v
                        .iter()
                        .zip(&flow.v)
                        .map(|(a, b)| (a.max(0.0).sqrt() - b.sqrt()).abs())
                        .collect();
                    let loading_overestimate =
                        result.l.iter().zip(&flow.l).map(|(a, b)| a - b).collect();
                    diagnostics = Some(CoordinationDiagnostics {
                        objective_eur: result.objective_eur,
                        breakdown: result.breakdown,
                        voltage_discrepancy_pu,
                        loading_overestimate,
                        relaxation_gaps: relaxation_gap(self.grid, &result),
                        hp_overlap: result.hp_overlap,
                        solver_iterations: solution.iterations,
                        solve_time_s: solution.solve_time_s,
                    });
                    setpoints = result.setpoints;
                    applied_flow = flow;
                }
                None => {
                    log::warn!(
                        "slot {slot}: coordination returned {:?} ({}); applying schedule",
                        solution.status,
                        solution.detail
                    );
                    unresolved = true;
                }
            }
        }

        let dt = self.config.slot_hours;
        for ((st, hh), (set, ds)) in states
            .iter_mut()
            .zip(self.households)
            .zip(setpoints.iter().zip(&sched.households))
        {
            let next = der::step_ev(st, &hh.params, set.p_ev, dt)
                .and_then(|s| der::step_tank(&s, &hh.params, set.p_hp, ds.p_hp_base, dt, self.config.cop))
                .map_err(|source| SimError::Der { slot, source })?;
            *st = next;
        }

        let curtailments = setpoints
            .iter()
            .zip(&sched.households)
            .map(|(s, ds)| Curtailment::of(s, ds))
            .collect();

        Ok(SlotRecord {
            slot,
            slot_hours: dt,
            pre_violations,
            post_violations,
            coordinated,
            unresolved,
            solver_status,
            setpoints,
            curtailments,
            states_after: states.to_vec(),
            scheduled_flow,
            applied_flow,
            grid_state_source: GridStateSource::PowerFlow,
            diagnostics,
        })
    }

    /// Folds [`Simulator::run_slot`] and [`catch_up`] over the whole schedule.
    pub fn run_horizon(
        &self,
        initial: &[HouseholdState],
        schedule: &[ScheduleSlot],
    ) -> Result<Vec<SlotRecord>, SimError> {
        let mut states = initial.to_vec();
        let mut schedule = schedule.to_vec();
        let mut records = Vec::with_capacity(schedule.len());
        for slot in 0..schedule.len() {
            let rec = self.run_slot(slot, &mut states, &schedule[slot])?;
            if rec.coordinated {
                let risks = catch_up(
                    &states,
                    self.households,
                    &mut schedule[slot + 1..],
                    slot + 1,
                    self.config.slot_hours,
                );
                for r in risks {
                    log::info!("slot {slot}: {r}");
                }
            }
            records.push(rec);
        }
        Ok(records)
    }
}

/// Energy that catch-up could not place before the horizon or departure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatchUpRisk {
    Ev { household: usize, kwh: f64 },
    HeatPump { household: usize, kwh: f64 },
}

impl std::fmt::Display for CatchUpRisk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CatchUpRisk::Ev { household, kwh } => {
                write!(f, "household {household}: {kwh:.4} kWh of EV charging cannot be placed")
            }
            CatchUpRisk::HeatPump { household, kwh } => {
                write!(f, "household {household}: {kwh:.4} kWh of heat-pump deviation remains")
            }
        }
    }
}

/// Energy below this (kWh) is treated as settled.
const CATCH_UP_EPS: f64 = 1e-12;

/// Reschedules the remaining slots so curtailed energy is made up.
///
/// EVs: any shortfall between the energy still needed for a full battery and
/// the energy already planned is added at charger maximum in the earliest
/// slots with headroom, never at or after departure. Heat pumps: the gap
/// between the pending deviation and the catch-up already planned is spread
/// earliest-first within `[0, hp_p_max]`. `first_slot` is the slot index of
/// `remaining[0]`.
pub fn catch_up(
    states: &[HouseholdState],
    households: &[Household],
    remaining: &mut [ScheduleSlot],
    first_slot: usize,
    slot_hours: f64,
) -> Vec<CatchUpRisk> {
    let mut risks = Vec::new();
    for (h, (st, hh)) in states.iter().zip(households).enumerate() {
        let par = &hh.params;
        if par.has_ev() {
            let needed = (1.0 - st.ev_soc).max(0.0) * par.ev_capacity / par.ev_efficiency;
            let planned: f64 = remaining
                .iter()
                .enumerate()
                .filter(|(k, _)| st.ev_connected_at(first_slot + k))
                .map(|(_, s)| s.households[h].p_ev_max * slot_hours)
                .sum();
            let mut deficit = needed - planned;
            if deficit > CATCH_UP_EPS {
                for (k, s) in remaining.iter_mut().enumerate() {
                    if deficit <= CATCH_UP_EPS {
                        break;
                    }
                    if !st.ev_connected_at(first_slot + k) {
                        continue;
                    }
                    let ds = &mut s.households[h];
                    let add = (par.ev_charger_p_max - ds.p_ev_max).max(0.0).min(deficit / slot_hours);
                    ds.p_ev_max += add;
                    deficit -= add * slot_hours;
                }
                if deficit > CATCH_UP_EPS {
                    risks.push(CatchUpRisk::Ev { household: h, kwh: deficit });
                }
            }
        }

        if par.has_hp() {
            let planned: f64 = remaining
                .iter()
                .map(|s| (s.households[h].p_hp_set - s.households[h].p_hp_base) * slot_hours)
                .sum();
            let mut gap = st.pending_hp_deviation - planned;
            for s in remaining.iter_mut() {
                if gap.abs() <= CATCH_UP_EPS {
                    break;
                }
                let ds = &mut s.households[h];
                let target = (ds.p_hp_set + gap / slot_hours).clamp(0.0, par.hp_p_max);
                gap -= (target - ds.p_hp_set) * slot_hours;
                ds.p_hp_set = target;
            }
            if gap.abs() > CATCH_UP_EPS {
                risks.push(CatchUpRisk::HeatPump { household: h, kwh: gap });
            }
        }
    }
    risks
}
