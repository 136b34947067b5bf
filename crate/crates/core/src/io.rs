//! File formats.
//!
//! * Grid JSON: `base_power_va`, `base_voltage_v`, optional `slack_voltage_pu`,
//!   `buses` (`id`, `kind` = slack | junction | household, `household` index
//!   for household buses, optional `vmin_pu`/`vmax_pu` magnitudes) and `lines`
//!   (`from`, `to`, `r_ohm`, `x_ohm`, `i_max_a`). Lines may be listed in either
//!   direction.
//! * Grid CSV: header `from,to,r_ohm,x_ohm,i_max_a`. Bus 0 is the slack and
//!   every other bus hosts one household, numbered in bus order. Base values
//!   are 100 kVA / 400 V.
//! * Household JSON: object keyed by bus id, each entry holding `params` and
//!   `initial_state`.
//! * Profile CSV: header `slot,household_id,p_load_kw,q_load_kvar,p_pv_kw,p_ev_kw,p_hp_kw`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{Household, HouseholdParams, HouseholdState};
use crate::grid::{Bus, BusKind, Grid, Line, DEFAULT_VMAX_PU, DEFAULT_VMIN_PU};
use crate::scenario::{Profile, Scenario};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, msg: impl ToString) -> IoError {
    IoError::Parse { path: path.to_path_buf(), msg: msg.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKindSi {
    Slack,
    Junction,
    Household,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSi {
    pub id: usize,
    pub kind: BusKindSi,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub household: Option<usize>,
    #[serde(default = "default_vmin")]
    pub vmin_pu: f64,
    #[serde(default = "default_vmax")]
    pub vmax_pu: f64,
}

fn default_vmin() -> f64 {
    DEFAULT_VMIN_PU
}

fn default_vmax() -> f64 {
    DEFAULT_VMAX_PU
}

fn default_slack() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSi {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub i_max_a: f64,
}

/// Grid as stored on disk, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub base_power_va: f64,
    pub base_voltage_v: f64,
    #[serde(default = "default_slack")]
    pub slack_voltage_pu: f64,
    pub buses: Vec<BusSi>,
    pub lines: Vec<LineSi>,
}

impl GridFile {
    pub fn to_grid(&self) -> Result<Grid, String> {
        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let kind = match (b.kind, b.household) {
                (BusKindSi::Slack, None) => BusKind::Slack,
                (BusKindSi::Junction, None) => BusKind::Junction,
                (BusKindSi::Household, Some(h)) => BusKind::Household(h),
                (BusKindSi::Household, None) => {
                    return Err(format!("bus {} is a household bus without a household id", b.id))
                }
                (_, Some(_)) => {
                    return Err(format!("bus {} carries a household id but is not a household bus", b.id))
                }
            };
            buses.push(Bus { id: b.id, kind, vmin: b.vmin_pu.powi(2), vmax: b.vmax_pu.powi(2) });
        }
        let scratch = Grid::new(Vec::new(), Vec::new(), self.base_power_va, self.base_voltage_v, 1.0);
        let lines = self
            .lines
            .iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                r: scratch.impedance_to_pu(l.r_ohm),
                x: scratch.impedance_to_pu(l.x_ohm),
                l_max: scratch.current_to_pu(l.i_max_a).powi(2),
            })
            .collect();
        Ok(Grid::new(
            buses,
            lines,
            self.base_power_va,
            self.base_voltage_v,
            self.slack_voltage_pu.powi(2),
        ))
    }

    pub fn from_grid(grid: &Grid) -> Self {
        Self {
            base_power_va: grid.base_power,
            base_voltage_v: grid.base_voltage,
            slack_voltage_pu: grid.slack_v.sqrt(),
            buses: grid
                .buses
                .iter()
                .map(|b| BusSi {
                    id: b.id,
                    kind: match b.kind {
                        BusKind::Slack => BusKindSi::Slack,
                        BusKind::Junction => BusKindSi::Junction,
                        BusKind::Household(_) => BusKindSi::Household,
                    },
                    household: b.household(),
                    vmin_pu: b.vmin.sqrt(),
                    vmax_pu: b.vmax.sqrt(),
                })
                .collect(),
            lines: grid
                .lines
                .iter()
                .map(|l| LineSi {
                    from: l.from,
                    to: l.to,
                    r_ohm: grid.impedance_to_si(l.r),
                    x_ohm: grid.impedance_to_si(l.x),
                    i_max_a: grid.current_to_si(l.l_max.sqrt()),
                })
                .collect(),
        }
    }
}

/// Reads a grid from JSON, or CSV when the extension is `.csv`.
pub fn read_grid(path: &Path) -> Result<Grid, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return grid_from_csv(&text).map_err(|m| parse_err(path, m));
    }
    let file: GridFile = serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg);
        parse_err(path, format!("line {}, column {}: {msg}", e.line(), e.column()))
    })?;
    file.to_grid().map_err(|m| parse_err(path, m))
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(&GridFile::from_grid(grid))
        .map_err(|e| parse_err(path, e))?;
    fs::write(path, text + "\n").map_err(file_err(path))
}

/// Parses the line-list CSV form of a grid.
pub fn grid_from_csv(text: &str) -> Result<Grid, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let expected = ["from", "to", "r_ohm", "x_ohm", "i_max_a"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(format!("expected header `{}`", expected.join(",")));
    }
    let mut lines = Vec::new();
    for (row, rec) in rdr.deserialize::<LineSi>().enumerate() {
        lines.push(rec.map_err(|e| format!("row {}: {e}", row + 2))?);
    }
    let n = lines.iter().map(|l| l.from.max(l.to) + 1).max().unwrap_or(1);
    let buses = (0..n)
        .map(|id| BusSi {
            id,
            kind: if id == 0 { BusKindSi::Slack } else { BusKindSi::Household },
            household: (id > 0).then(|| id - 1),
            vmin_pu: DEFAULT_VMIN_PU,
            vmax_pu: DEFAULT_VMAX_PU,
        })
        .collect();
    GridFile { base_power_va: 1e5, base_voltage_v: 400.0, slack_voltage_pu: 1.0, buses, lines }
        .to_grid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdEntry {
    pub params: HouseholdParams,
    pub initial_state: HouseholdState,
}

pub fn write_households(
    path: &Path,
    households: &[Household],
    states: &[HouseholdState],
) -> Result<(), IoError> {
    let map: BTreeMap<String, HouseholdEntry> = households
        .iter()
        .zip(states)
        .map(|(hh, st)| {
            (hh.bus.to_string(), HouseholdEntry { params: hh.params.clone(), initial_state: *st })
        })
        .collect();
    let text = serde_json::to_string_pretty(&map).map_err(|e| parse_err(path, e))?;
    fs::write(path, text + "\n").map_err(file_err(path))
}

/// Reads households keyed by bus id and orders them by the household index
/// of their bus in `grid`.
pub fn read_households(
    path: &Path,
    grid: &Grid,
) -> Result<(Vec<Household>, Vec<HouseholdState>), IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let map: BTreeMap<String, HouseholdEntry> =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    let nh = grid.n_households();
    let mut slots: Vec<Option<(Household, HouseholdState)>> = vec![None; nh];
    for (key, entry) in map {
        let bus: usize = key.parse().map_err(|_| parse_err(path, format!("bad bus id `{key}`")))?;
        let h = grid
            .buses
            .get(bus)
            .and_then(Bus::household)
            .ok_or_else(|| parse_err(path, format!("bus {bus} is not a household bus")))?;
        slots[h] = Some((Household { bus, params: entry.params }, entry.initial_state));
    }
    let mut households = Vec::with_capacity(nh);
    let mut states = Vec::with_capacity(nh);
    for (h, s) in slots.into_iter().enumerate() {
        let (hh, st) = s.ok_or_else(|| parse_err(path, format!("no entry for household {h}")))?;
        households.push(hh);
        states.push(st);
    }
    Ok((households, states))
}

pub const PROFILE_HEADER: &str = "slot,household_id,p_load_kw,q_load_kvar,p_pv_kw,p_ev_kw,p_hp_kw";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ProfileRow {
    slot: usize,
    household_id: usize,
    p_load_kw: f64,
    q_load_kvar: f64,
    p_pv_kw: f64,
    p_ev_kw: f64,
    p_hp_kw: f64,
}

pub fn write_profiles(path: &Path, profiles: &[Profile]) -> Result<(), IoError> {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    let slots = profiles.first().map_or(0, Profile::len);
    for t in 0..slots {
        for (h, p) in profiles.iter().enumerate() {
            out.push_str(&format!(
                "{t},{h},{},{},{},{},{}\n",
                p.p_load[t], p.q_load[t], p.p_pv[t], p.p_ev[t], p.p_hp[t]
            ));
        }
    }
    fs::write(path, out).map_err(file_err(path))
}

/// Reads a profile CSV. Every (slot, household) pair must appear exactly once.
pub fn read_profiles(path: &Path, households: usize, slots: usize) -> Result<Vec<Profile>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    profiles_from_csv(&text, households, slots).map_err(|m| parse_err(path, m))
}

pub fn profiles_from_csv(text: &str, households: usize, slots: usize) -> Result<Vec<Profile>, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != PROFILE_HEADER {
        return Err(format!("expected header `{PROFILE_HEADER}`"));
    }
    let mut profiles = vec![
        Profile {
            p_load: vec![f64::NAN; slots],
            q_load: vec![f64::NAN; slots],
            p_pv: vec![f64::NAN; slots],
            p_ev: vec![f64::NAN; slots],
            p_hp: vec![f64::NAN; slots],
        };
        households
    ];
    let mut seen = vec![vec![false; slots]; households];
    for (i, rec) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| format!("row {row}: {e}"))?;
        if r.household_id >= households || r.slot >= slots {
            return Err(format!(
                "row {row}: slot {} / household {} outside {slots} slots x {households} households",
                r.slot, r.household_id
            ));
        }
        if std::mem::replace(&mut seen[r.household_id][r.slot], true) {
            return Err(format!("row {row}: duplicate slot {} for household {}", r.slot, r.household_id));
        }
        let vals = [r.p_load_kw, r.q_load_kvar, r.p_pv_kw, r.p_ev_kw, r.p_hp_kw];
        if vals.iter().any(|v| !v.is_finite()) || r.p_pv_kw < 0.0 || r.p_ev_kw < 0.0 || r.p_hp_kw < 0.0 {
            return Err(format!("row {row}: non-finite or negative device power"));
        }
        let p = &mut profiles[r.household_id];
        p.p_load[r.slot] = r.p_load_kw;
        p.q_load[r.slot] = r.q_load_kvar;
        p.p_pv[r.slot] = r.p_pv_kw;
        p.p_ev[r.slot] = r.p_ev_kw;
        p.p_hp[r.slot] = r.p_hp_kw;
    }
    for (h, s) in seen.iter().enumerate() {
        if let Some(t) = s.iter().position(|x| !x) {
            return Err(format!("missing slot {t} for household {h}"));
        }
    }
    Ok(profiles)
}

/// Bundle metadata stored next to the data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub slots: usize,
    pub slot_hours: f64,
}

pub const GRID_FILE: &str = "grid.json";
pub const HOUSEHOLDS_FILE: &str = "households.json";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const META_FILE: &str = "scenario.json";

/// Writes `grid.json`, `households.json`, `profiles.csv` and `scenario.json`.
pub fn write_bundle(dir: &Path, scenario: &Scenario) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    write_grid(&dir.join(GRID_FILE), &scenario.grid)?;
    write_households(&dir.join(HOUSEHOLDS_FILE), &scenario.households, &scenario.initial_states)?;
    write_profiles(&dir.join(PROFILES_FILE), &scenario.profiles)?;
    let meta = BundleMeta { slots: scenario.slots, slot_hours: scenario.slot_hours };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| parse_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(file_err(&path))
}

pub fn read_bundle(dir: &Path) -> Result<Scenario, IoError> {
    let meta_path = dir.join(META_FILE);
    let meta: BundleMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(file_err(&meta_path))?,
    )
    .map_err(|e| parse_err(&meta_path, e))?;
    let grid = read_grid(&dir.join(GRID_FILE))?;
    let (households, initial_states) = read_households(&dir.join(HOUSEHOLDS_FILE), &grid)?;
    let profiles = read_profiles(&dir.join(PROFILES_FILE), households.len(), meta.slots)?;
    Ok(Scenario {
        grid,
        households,
        profiles,
        initial_states,
        slots: meta.slots,
        slot_hours: meta.slot_hours,
    })
}
