//! Synthetic scenarios: feeders, household fleets and one day of profiles.
//!
//! Every household draws from its own RNG stream seeded from the master seed
//! and its index, so adding households never shifts the draws of existing
//! ones.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{
    tank_volume_for, DeviceSchedule, Household, HouseholdParams, HouseholdState, ScheduleSlot,
    TAN_PHI_PF090, TAN_PHI_PF095,
};
use crate::grid::{Bus, BusKind, Grid, Line};
use crate::io::{self, IoError};
use crate::operation::{Mode, SimConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeederTemplate {
    /// Households in series behind the slack, one per bus.
    Chain { r_ohm: f64, x_ohm: f64, i_max_a: f64 },
    /// Every household on its own cable from the slack.
    Star { r_ohm: f64, x_ohm: f64, i_max_a: f64 },
    /// The fixed 12-bus, 10-household stress feeder.
    Acceptance,
    /// Grid file (JSON or CSV) on disk.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_households: usize,
    pub slots: usize,
    pub slot_hours: f64,
    /// Clock hour at which slot 0 starts.
    pub start_hour: f64,
    /// Mean EV arrival, slots. Not given by any dataset; chosen as early evening.
    pub ev_arrival_mean: f64,
    pub ev_arrival_std: f64,
    pub ev_daily_energy_kwh: f64,
    pub charger_voltage_v: f64,
    pub charger_current_a: f64,
    pub ev_efficiency: f64,
    pub pv_rating_kw: f64,
    /// Winter midday PV output as a fraction of rating.
    pub pv_winter_peak_fraction: f64,
    /// Peak of the heat-pump base profile, kW electric.
    pub hp_peak_kw: f64,
    pub hp_p_max_kw: f64,
    pub base_load_peak_kw: f64,
    /// Relative spread of per-household profile scaling.
    pub load_variation: f64,
    pub cop: f64,
    pub tank_band_c: f64,
    pub pv_tan_phi: f64,
    pub ev_tan_phi: f64,
    pub hp_tan_phi: f64,
    pub feeder: FeederTemplate,
    pub base_power_va: f64,
    pub base_voltage_v: f64,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
    pub slack_v_pu: f64,
    /// Profile CSV replacing the synthetic profiles.
    pub profile_csv: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_households: 10,
            slots: 96,
            slot_hours: 0.25,
            start_hour: 8.0,
            ev_arrival_mean: 40.0,
            ev_arrival_std: 6.0,
            ev_daily_energy_kwh: 7.5,
            charger_voltage_v: 230.0,
            charger_current_a: 16.0,
            ev_efficiency: 0.9,
            pv_rating_kw: 4.5,
            pv_winter_peak_fraction: 0.15,
            hp_peak_kw: 2.5,
            hp_p_max_kw: 4.0,
            base_load_peak_kw: 1.2,
            load_variation: 0.15,
            cop: 3.0,
            tank_band_c: 5.0,
            pv_tan_phi: TAN_PHI_PF090,
            ev_tan_phi: TAN_PHI_PF090,
            hp_tan_phi: TAN_PHI_PF095,
            feeder: FeederTemplate::Chain { r_ohm: 0.02, x_ohm: 0.008, i_max_a: 200.0 },
            base_power_va: 1e5,
            base_voltage_v: 400.0,
            vmin_pu: 0.9,
            vmax_pu: 1.1,
            slack_v_pu: 1.0,
            profile_csv: None,
        }
    }
}

impl ScenarioConfig {
    /// Grid-side charger power, kW.
    pub fn charger_kw(&self) -> f64 {
        self.charger_voltage_v * self.charger_current_a / 1000.0
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if self.slots == 0 || !(self.slot_hours > 0.0) {
            return bad("slots and slot_hours must be positive");
        }
        if !(self.ev_arrival_std >= 0.0) || !self.ev_arrival_mean.is_finite() {
            return bad("ev_arrival_std must be >= 0 and the mean finite");
        }
        if !(self.ev_efficiency > 0.0 && self.ev_efficiency <= 1.0) {
            return bad("ev_efficiency must be in (0, 1]");
        }
        if self.hp_peak_kw > self.hp_p_max_kw {
            return bad("hp_peak_kw exceeds hp_p_max_kw");
        }
        if !(0.0..1.0).contains(&self.load_variation) {
            return bad("load_variation must be in [0, 1)");
        }
        if !(self.vmin_pu > 0.0 && self.vmin_pu < self.vmax_pu) {
            return bad("voltage bounds must satisfy 0 < vmin < vmax");
        }
        if matches!(self.feeder, FeederTemplate::Acceptance) && self.n_households != 10 {
            return bad("the acceptance feeder hosts exactly 10 households");
        }
        Ok(())
    }
}

/// Per-slot series for one household, kW / kvar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_pv: Vec<f64>,
    pub p_ev: Vec<f64>,
    pub p_hp: Vec<f64>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.p_load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_load.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: Grid,
    pub households: Vec<Household>,
    pub profiles: Vec<Profile>,
    pub initial_states: Vec<HouseholdState>,
    pub slots: usize,
    pub slot_hours: f64,
}

impl Scenario {
    /// Default simulation settings matched to this scenario's horizon: slot
    /// length and the EV cost horizon follow the scenario.
    pub fn sim_config(&self, mode: Mode) -> SimConfig {
        let mut config = SimConfig { mode, slot_hours: self.slot_hours, ..SimConfig::default() };
        config.costs.t_max = self.slots;
        config
    }

    /// The collected schedule: one [`ScheduleSlot`] per slot.
    pub fn schedule(&self) -> Vec<ScheduleSlot> {
        (0..self.slots)
            .map(|t| ScheduleSlot {
                households: self
                    .profiles
                    .iter()
                    .map(|p| DeviceSchedule {
                        p_load: p.p_load[t],
                        q_load: p.q_load[t],
                        p_pv_fore: p.p_pv[t],
                        p_ev_max: p.p_ev[t],
                        p_hp_set: p.p_hp[t],
                        p_hp_base: p.p_hp[t],
                    })
                    .collect(),
            })
            .collect()
    }

    /// Checks profile lengths and device bounds against the fleet.
    pub fn check(&self) -> Result<(), ScenarioError> {
        self.grid.ensure_valid().map_err(|e| ScenarioError::Config(e.to_string()))?;
        let nh = self.households.len();
        if self.profiles.len() != nh || self.initial_states.len() != nh {
            return Err(ScenarioError::Config(format!(
                "{nh} households, {} profiles, {} initial states",
                self.profiles.len(),
                self.initial_states.len()
            )));
        }
        if self.grid.n_households() != nh {
            return Err(ScenarioError::Config(format!(
                "grid has {} household buses for {nh} households",
                self.grid.n_households()
            )));
        }
        for (h, (hh, p)) in self.households.iter().zip(&self.profiles).enumerate() {
            hh.params.check().map_err(|e| ScenarioError::Config(format!("household {h}: {e}")))?;
            if self.grid.bus_of_household(h) != Some(hh.bus) {
                return Err(ScenarioError::Config(format!(
                    "household {h} is not connected at bus {}",
                    hh.bus
                )));
            }
            let series = [&p.p_load, &p.q_load, &p.p_pv, &p.p_ev, &p.p_hp];
            if series.iter().any(|s| s.len() != self.slots) {
                return Err(ScenarioError::Config(format!(
                    "household {h}: profile length differs from {} slots",
                    self.slots
                )));
            }
            let tol = 1e-9;
            if p.p_pv.iter().any(|&v| v < 0.0)
                || p.p_ev.iter().any(|&v| v < 0.0 || v > hh.params.ev_charger_p_max + tol)
                || p.p_hp.iter().any(|&v| v < 0.0 || v > hh.params.hp_p_max + tol)
            {
                return Err(ScenarioError::Config(format!(
                    "household {h}: profile outside device bounds"
                )));
            }
        }
        Ok(())
    }
}

fn household_rng(seed: u64, household: usize) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, household)
    let mut z = seed ^ (household as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Gaussian bump on the 24 h circle.
fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let d = (hour - center + 12.0).rem_euclid(24.0) - 12.0;
    (-0.5 * (d / width).powi(2)).exp()
}

fn base_load_shape(hour: f64) -> f64 {
    0.2 + 0.3 * bump(hour, 7.5, 1.0) + 0.2 * bump(hour, 12.5, 1.5) + 0.8 * bump(hour, 19.0, 1.8)
}

fn hp_shape(hour: f64) -> f64 {
    0.3 + 0.7 * bump(hour, 19.0, 2.5) + 0.4 * bump(hour, 6.5, 1.5)
}

fn pv_shape(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    if (8.5..=16.5).contains(&h) {
        (std::f64::consts::PI * (h - 8.5) / 8.0).sin()
    } else {
        0.0
    }
}

/// Charging at `charger_kw` from `arrival` until `grid_kwh` is drawn; the last
/// slot is partial.
pub fn uncontrolled_charging(
    slots: usize,
    slot_hours: f64,
    arrival: usize,
    charger_kw: f64,
    grid_kwh: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; slots];
    let mut left = grid_kwh;
    for p in out.iter_mut().skip(arrival) {
        if left <= 0.0 {
            break;
        }
        *p = charger_kw.min(left / slot_hours);
        left -= *p * slot_hours;
    }
    out
}

/// EV arrival slot drawn from the household's stream.
pub fn draw_arrival(rng: &mut impl Rng, mean: f64, std: f64, slots: usize) -> usize {
    let x = if std > 0.0 {
        Normal::new(mean, std).map(|n| n.sample(rng)).unwrap_or(mean)
    } else {
        mean
    };
    x.round().clamp(0.0, (slots - 1) as f64) as usize
}

/// Builds grid, fleet, profiles and initial states from a config.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    config.check()?;
    let grid = match &config.feeder {
        FeederTemplate::Chain { r_ohm, x_ohm, i_max_a } => {
            template_grid(config, *r_ohm, *x_ohm, *i_max_a, false)
        }
        FeederTemplate::Star { r_ohm, x_ohm, i_max_a } => {
            template_grid(config, *r_ohm, *x_ohm, *i_max_a, true)
        }
        FeederTemplate::Acceptance => acceptance_grid(config),
        FeederTemplate::File { path } => io::read_grid(path)?,
    };
    let nh = grid.n_households();
    if nh != config.n_households {
        return Err(ScenarioError::Config(format!(
            "feeder has {nh} household buses but n_households = {}",
            config.n_households
        )));
    }

    let charger = config.charger_kw();
    let mut households = Vec::with_capacity(nh);
    let mut profiles = Vec::with_capacity(nh);
    let mut initial_states = Vec::with_capacity(nh);
    let spread = config.load_variation;
    for h in 0..nh {
        let mut rng = household_rng(config.seed, h);
        let load_scale = 1.0 + spread * (2.0 * rng.gen::<f64>() - 1.0);
        let hp_scale = 1.0 + spread * (2.0 * rng.gen::<f64>() - 1.0);
        let arrival =
            draw_arrival(&mut rng, config.ev_arrival_mean, config.ev_arrival_std, config.slots);

        let hp_peak = (config.hp_peak_kw * hp_scale).min(config.hp_p_max_kw);
        let params = HouseholdParams {
            pv_rating: config.pv_rating_kw,
            pv_tan_phi: config.pv_tan_phi,
            ev_rating: charger,
            ev_tan_phi: config.ev_tan_phi,
            ev_capacity: config.ev_daily_energy_kwh,
            ev_charger_p_max: charger,
            ev_efficiency: config.ev_efficiency,
            hp_p_max: config.hp_p_max_kw,
            hp_tan_phi: config.hp_tan_phi,
            tank_volume: tank_volume_for(config.cop * hp_peak),
            tank_band: config.tank_band_c,
        };

        let hours: Vec<f64> =
            (0..config.slots).map(|t| config.start_hour + t as f64 * config.slot_hours).collect();
        let p_load: Vec<f64> = hours
            .iter()
            .map(|&h| config.base_load_peak_kw * load_scale * base_load_shape(h))
            .collect();
        let q_load = p_load.iter().map(|p| p * TAN_PHI_PF095).collect();
        let p_pv = hours
            .iter()
            .map(|&h| config.pv_rating_kw * config.pv_winter_peak_fraction * pv_shape(h))
            .collect();
        let hp_norm = hours.iter().map(|&h| hp_shape(h)).fold(0.0, f64::max).max(1.0);
        let p_hp = hours.iter().map(|&h| hp_peak * hp_shape(h) / hp_norm).collect();
        let p_ev = uncontrolled_charging(
            config.slots,
            config.slot_hours,
            arrival,
            charger,
            config.ev_daily_energy_kwh / config.ev_efficiency,
        );

        let bus = grid.bus_of_household(h).expect("household bus exists");
        households.push(Household { bus, params });
        profiles.push(Profile { p_load, q_load, p_pv, p_ev, p_hp });
        initial_states.push(HouseholdState::new(arrival, config.slots));
    }

    if let Some(path) = &config.profile_csv {
        profiles = io::read_profiles(path, nh, config.slots)?;
    }

    let scenario = Scenario {
        grid,
        households,
        profiles,
        initial_states,
        slots: config.slots,
        slot_hours: config.slot_hours,
    };
    scenario.check()?;
    Ok(scenario)
}

fn bus_with_limits(id: usize, kind: BusKind, config: &ScenarioConfig) -> Bus {
    Bus { id, kind, vmin: config.vmin_pu.powi(2), vmax: config.vmax_pu.powi(2) }
}

fn si_line(grid: &Grid, from: usize, to: usize, r_ohm: f64, x_ohm: f64, i_max_a: f64) -> Line {
    Line {
        from,
        to,
        r: grid.impedance_to_pu(r_ohm),
        x: grid.impedance_to_pu(x_ohm),
        l_max: grid.current_to_pu(i_max_a).powi(2),
    }
}

fn empty_grid(config: &ScenarioConfig) -> Grid {
    Grid::new(Vec::new(), Vec::new(), config.base_power_va, config.base_voltage_v, config.slack_v_pu.powi(2))
}

fn template_grid(config: &ScenarioConfig, r: f64, x: f64, i_max: f64, star: bool) -> Grid {
    let mut g = empty_grid(config);
    let mut buses = vec![bus_with_limits(0, BusKind::Slack, config)];
    let mut lines = Vec::new();
    for h in 0..config.n_households {
        buses.push(bus_with_limits(h + 1, BusKind::Household(h), config));
        let from = if star { 0 } else { h };
        lines.push(si_line(&g, from, h + 1, r, x, i_max));
    }
    g = Grid::new(buses, lines, g.base_power, g.base_voltage, g.slack_v);
    g
}

/// SI data of the acceptance feeder: `(from, to, r_ohm, x_ohm, i_max_a)`.
///
/// Bus 0 is the slack, bus 1 the feeder head, buses 2..=11 host households
/// 0..=9. A trunk runs 1-2-3-4-5-6 with laterals 3-7-8 and 5-9-10-11.
pub const ACCEPTANCE_LINES: [(usize, usize, f64, f64, f64); 11] = [
    (0, 1, 0.010, 0.004, 90.0),
    (1, 2, 0.050, 0.016, 150.0),
    (2, 3, 0.050, 0.016, 150.0),
    (3, 4, 0.060, 0.016, 120.0),
    (4, 5, 0.060, 0.016, 120.0),
    (5, 6, 0.080, 0.014, 80.0),
    (3, 7, 0.080, 0.014, 80.0),
    (7, 8, 0.080, 0.014, 80.0),
    (5, 9, 0.080, 0.014, 80.0),
    (9, 10, 0.080, 0.014, 80.0),
    (10, 11, 0.080, 0.014, 80.0),
];

fn acceptance_grid(config: &ScenarioConfig) -> Grid {
    let g = empty_grid(config);
    let mut buses = vec![
        bus_with_limits(0, BusKind::Slack, config),
        bus_with_limits(1, BusKind::Junction, config),
    ];
    for h in 0..10 {
        buses.push(bus_with_limits(h + 2, BusKind::Household(h), config));
    }
    let lines = ACCEPTANCE_LINES
        .iter()
        .map(|&(f, t, r, x, i)| si_line(&g, f, t, r, x, i))
        .collect();
    Grid::new(buses, lines, g.base_power, g.base_voltage, g.slack_v)
}

/// Config of the acceptance day: evening EV and heat-pump coincidence on the
/// 10-household feeder that breaches both voltage and ampacity limits when
/// left uncontrolled.
pub fn acceptance_config() -> ScenarioConfig {
    ScenarioConfig { feeder: FeederTemplate::Acceptance, n_households: 10, ..ScenarioConfig::default() }
}

/// The acceptance scenario preset.
pub fn acceptance_feeder() -> Scenario {
    generate(&acceptance_config()).expect("acceptance preset is valid")
}

/// A lightly loaded day on a stiff chain feeder; no limit is ever breached.
pub fn benign_config() -> ScenarioConfig {
    ScenarioConfig {
        n_households: 4,
        feeder: FeederTemplate::Chain { r_ohm: 0.01, x_ohm: 0.004, i_max_a: 300.0 },
        ..ScenarioConfig::default()
    }
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "acceptance" => Some(acceptance_config()),
        "benign" => Some(benign_config()),
        _ => None,
    }
}
