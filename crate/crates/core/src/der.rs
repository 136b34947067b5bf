//! Household devices: parameters, per-slot state, schedules and the dynamic
//! cost terms that express how urgent each device's demand is.
//!
//! Powers in this module are in kW/kvar and energies in kWh; conversion to
//! per-unit happens when the coordination model is built.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Water density, kg/L.
pub const WATER_DENSITY: f64 = 1.0;
/// Specific heat of water, kJ/(kg K).
pub const WATER_CP: f64 = 4.186;

#[derive(Debug, Error, PartialEq)]
pub enum DerError {
    #[error("slot {t} is past the horizon of {t_max} slots")]
    PastHorizon { t: usize, t_max: usize },
    #[error("slot index must start at 1")]
    ZeroSlot,
    #[error("cannot charge an EV that is not connected")]
    EvAbsent,
    #[error("{0} outside its allowed range")]
    OutOfRange(&'static str),
}

/// tan(acos(0.9)).
pub const TAN_PHI_PF090: f64 = 0.484_322_104_837_853_1;
/// tan(acos(0.95)).
pub const TAN_PHI_PF095: f64 = 0.328_684_105_821_899_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HouseholdParams {
    /// PV inverter rating, kVA.
    pub pv_rating: f64,
    pub pv_tan_phi: f64,
    /// EV charger apparent power rating, kVA.
    pub ev_rating: f64,
    pub ev_tan_phi: f64,
    /// Energy needed to count as fully charged, kWh.
    pub ev_capacity: f64,
    /// Grid-side charger limit, kW.
    pub ev_charger_p_max: f64,
    pub ev_efficiency: f64,
    pub hp_p_max: f64,
    pub hp_tan_phi: f64,
    /// Liters.
    pub tank_volume: f64,
    /// Allowed symmetric deviation from the reference temperature, degC.
    pub tank_band: f64,
}

impl Default for HouseholdParams {
    fn default() -> Self {
        let charger = 230.0 * 16.0 / 1000.0;
        Self {
            pv_rating: 4.5,
            pv_tan_phi: TAN_PHI_PF090,
            ev_rating: charger,
            ev_tan_phi: TAN_PHI_PF090,
            ev_capacity: 7.5,
            ev_charger_p_max: charger,
            ev_efficiency: 0.9,
            hp_p_max: 4.0,
            hp_tan_phi: TAN_PHI_PF095,
            tank_volume: 1000.0,
            tank_band: 5.0,
        }
    }
}

impl HouseholdParams {
    /// Parameters of a household without any controllable device.
    pub fn passive() -> Self {
        Self {
            pv_rating: 0.0,
            ev_rating: 0.0,
            ev_capacity: 0.0,
            ev_charger_p_max: 0.0,
            hp_p_max: 0.0,
            ..Self::default()
        }
    }

    pub fn has_pv(&self) -> bool {
        self.pv_rating > 0.0
    }

    pub fn has_ev(&self) -> bool {
        self.ev_rating > 0.0 && self.ev_charger_p_max > 0.0
    }

    pub fn has_hp(&self) -> bool {
        self.hp_p_max > 0.0
    }

    pub fn check(&self) -> Result<(), DerError> {
        let ratings = [
            self.pv_rating,
            self.pv_tan_phi,
            self.ev_rating,
            self.ev_tan_phi,
            self.ev_capacity,
            self.ev_charger_p_max,
            self.hp_p_max,
            self.hp_tan_phi,
        ];
        if ratings.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DerError::OutOfRange("device rating"));
        }
        if !(self.ev_efficiency > 0.0 && self.ev_efficiency <= 1.0) {
            return Err(DerError::OutOfRange("ev_efficiency"));
        }
        if !(self.tank_volume > 0.0) {
            return Err(DerError::OutOfRange("tank_volume"));
        }
        if !(self.tank_band > 0.0) {
            return Err(DerError::OutOfRange("tank_band"));
        }
        Ok(())
    }
}

/// A household and the bus it is connected to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub bus: usize,
    pub params: HouseholdParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdState {
    pub ev_soc: f64,
    pub ev_present: bool,
    /// First slot in which the EV is plugged in.
    pub ev_arrival_slot: usize,
    /// The EV leaves at the start of this slot.
    pub ev_departure_slot: usize,
    /// Tank temperature deviation from reference, degC.
    pub tank_dt: f64,
    /// Electrical energy the heat pump still owes its base profile, kWh.
    pub pending_hp_deviation: f64,
}

impl HouseholdState {
    pub fn new(ev_arrival_slot: usize, ev_departure_slot: usize) -> Self {
        Self {
            ev_soc: 0.0,
            ev_present: false,
            ev_arrival_slot,
            ev_departure_slot,
            tank_dt: 0.0,
            pending_hp_deviation: 0.0,
        }
    }

    pub fn ev_connected_at(&self, slot: usize) -> bool {
        slot >= self.ev_arrival_slot && slot < self.ev_departure_slot
    }
}

/// What one household intends to do in one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceSchedule {
    pub p_load: f64,
    pub q_load: f64,
    pub p_pv_fore: f64,
    /// Intended EV charging, kW.
    pub p_ev_max: f64,
    /// Intended heat-pump consumption including catch-up, kW.
    pub p_hp_set: f64,
    /// Heat-pump consumption that meets the heat demand and holds tank
    /// temperature, kW. Catch-up never changes it.
    pub p_hp_base: f64,
}

/// All households' intents for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSlot {
    pub households: Vec<DeviceSchedule>,
}

/// Cost coefficients for one coordination run, EUR/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub c_loss: f64,
    pub households: Vec<HouseholdCosts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseholdCosts {
    pub c_pv: f64,
    pub c_ev: f64,
    pub c_hp_up: f64,
    pub c_hp_down: f64,
}

impl CostTerms {
    /// Multiplies every coefficient by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            c_loss: self.c_loss * k,
            households: self
                .households
                .iter()
                .map(|h| HouseholdCosts {
                    c_pv: h.c_pv * k,
                    c_ev: h.c_ev * k,
                    c_hp_up: h.c_hp_up * k,
                    c_hp_down: h.c_hp_down * k,
                })
                .collect(),
        }
    }
}

/// Settings behind the dynamic cost terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub c_loss: f64,
    pub c_pv: f64,
    pub c0: f64,
    pub t_max: usize,
    /// Floor applied to both heat-pump regulation costs.
    pub hp_floor: f64,
    /// Slope of the heat-pump costs in the normalized temperature deviation.
    pub hp_slope: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { c_loss: 32.0, c_pv: 200.0, c0: 1440.0, t_max: 96, hp_floor: 10.0, hp_slope: 150.0 }
    }
}

/// `c0 (1 - soc) / (t_max - t + 1)` with `t` counted from 1.
pub fn ev_cost(soc: f64, t: usize, t_max: usize, c0: f64) -> Result<f64, DerError> {
    if t == 0 {
        return Err(DerError::ZeroSlot);
    }
    if t > t_max {
        return Err(DerError::PastHorizon { t, t_max });
    }
    if !(0.0..=1.0).contains(&soc) {
        return Err(DerError::OutOfRange("soc"));
    }
    Ok(c0 * (1.0 - soc) / (t_max - t + 1) as f64)
}

/// `(max(10, 150 dT/band), max(10, -150 dT/band))`.
pub fn hp_costs(tank_dt: f64, band: f64) -> (f64, f64) {
    hp_costs_with(tank_dt, band, 10.0, 150.0)
}

pub fn hp_costs_with(tank_dt: f64, band: f64, floor: f64, slope: f64) -> (f64, f64) {
    (floor.max(slope * tank_dt / band), floor.max(-slope * tank_dt / band))
}

/// Cost terms for every household from its current state. `slot` is 0-based.
pub fn cost_terms(
    config: &CostConfig,
    households: &[Household],
    states: &[HouseholdState],
    slot: usize,
) -> Result<CostTerms, DerError> {
    let t = slot + 1;
    let per = households
        .iter()
        .zip(states)
        .map(|(hh, st)| {
            let c_ev = if hh.params.has_ev() && st.ev_connected_at(slot) {
                ev_cost(st.ev_soc.clamp(0.0, 1.0), t, config.t_max, config.c0)?
            } else {
                0.0
            };
            let (c_hp_up, c_hp_down) =
                hp_costs_with(st.tank_dt, hh.params.tank_band, config.hp_floor, config.hp_slope);
            Ok(HouseholdCosts { c_pv: config.c_pv, c_ev, c_hp_up, c_hp_down })
        })
        .collect::<Result<_, DerError>>()?;
    Ok(CostTerms { c_loss: config.c_loss, households: per })
}

/// Advances the EV state of charge by one slot of charging at `p_ev` kW.
pub fn step_ev(
    state: &HouseholdState,
    params: &HouseholdParams,
    p_ev: f64,
    dt: f64,
) -> Result<HouseholdState, DerError> {
    if p_ev == 0.0 {
        return Ok(*state);
    }
    if !state.ev_present {
        return Err(DerError::EvAbsent);
    }
    if !(p_ev > 0.0 && p_ev <= params.ev_charger_p_max * (1.0 + 1e-12)) {
        return Err(DerError::OutOfRange("p_ev"));
    }
    let mut next = *state;
    next.ev_soc = (state.ev_soc + params.ev_efficiency * p_ev * dt / params.ev_capacity).min(1.0);
    Ok(next)
}

/// First-order tank energy balance. Following the base profile holds the
/// temperature; any deviation is integrated through `cop`.
pub fn step_tank(
    state: &HouseholdState,
    params: &HouseholdParams,
    p_hp: f64,
    p_hp_base: f64,
    dt: f64,
    cop: f64,
) -> Result<HouseholdState, DerError> {
    if !(p_hp >= 0.0 && p_hp <= params.hp_p_max * (1.0 + 1e-12)) {
        return Err(DerError::OutOfRange("p_hp"));
    }
    let deviation = p_hp - p_hp_base;
    let mut next = *state;
    next.tank_dt +=
        cop * deviation * dt * 3600.0 / (WATER_DENSITY * params.tank_volume * WATER_CP);
    next.pending_hp_deviation -= deviation * dt;
    Ok(next)
}

/// Tank size from peak heating demand: 1000 L up to 5 kW, 200 L per kW above.
pub fn tank_volume_for(heat_demand_peak: f64) -> f64 {
    1000.0 + 200.0 * (heat_demand_peak - 5.0).max(0.0)
}
