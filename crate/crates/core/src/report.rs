//! Run metrics and their serialized forms.
//!
//! Grid-state statistics come from the power flow of the applied setpoints in
//! each [`SlotRecord`], never from the coordination model's own variables.
//! Outputs: `slots.csv`, `cdf_voltage.csv`, `cdf_loading.csv` and
//! `summary.json`. CSVs are comma-separated with LF endings; floats carry nine
//! significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::Household;
use crate::grid::Grid;
use crate::operation::{GridStateSource, SlotRecord};
use crate::powerflow::LimitViolation;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no slot records to summarize")]
    Empty,
    #[error("slot {0}: grid state does not come from a power flow")]
    Provenance(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CurtailedEnergy {
    pub ev_kwh: f64,
    pub pv_kwh: f64,
    pub hp_down_kwh: f64,
    pub hp_up_kwh: f64,
}

/// Coordination model vs verifying power flow, over all coordinated slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelaxationStats {
    pub max_voltage_discrepancy_pu: f64,
    /// Smallest `l_model - l_pf` over lines and slots, pu^2.
    pub min_loading_overestimate: f64,
    pub max_loading_overestimate: f64,
    pub mean_loading_overestimate: f64,
    pub min_relaxation_gap: f64,
    pub max_relaxation_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slots: usize,
    pub min_voltage_pu: f64,
    pub max_voltage_pu: f64,
    pub max_loading_pct: f64,
    /// Slots whose scheduled state breached a limit.
    pub scheduled_violation_slots: usize,
    /// Slots whose applied state breached a limit.
    pub violation_slots: usize,
    pub under_voltage_slots: usize,
    pub over_voltage_slots: usize,
    pub overload_slots: usize,
    pub coordinated_slots: usize,
    pub unresolved_slots: usize,
    pub curtailed: CurtailedEnergy,
    pub ev_energy_kwh: f64,
    /// Fraction of EVs fully charged at departure.
    pub ev_satisfaction: f64,
    /// Fraction of heat-pump households whose tank never left its band.
    pub tank_satisfaction: f64,
    pub max_abs_tank_dt_c: f64,
    pub total_objective_eur: f64,
    pub relaxation: Option<RelaxationStats>,
    pub slot_min_voltage_pu: Vec<f64>,
    pub slot_max_voltage_pu: Vec<f64>,
    pub slot_max_loading_pct: Vec<f64>,
    /// Sorted bus voltages over all slots, pu.
    #[serde(skip)]
    pub voltage_cdf: Vec<f64>,
    /// Sorted line loadings over all slots, percent of ampacity.
    #[serde(skip)]
    pub loading_cdf: Vec<f64>,
}

/// State of charge counted as full.
pub const FULL_SOC_TOL: f64 = 1e-6;

pub fn summarize(
    records: &[SlotRecord],
    grid: &Grid,
    households: &[Household],
) -> Result<RunSummary, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut s = RunSummary {
        slots: records.len(),
        min_voltage_pu: f64::INFINITY,
        max_voltage_pu: f64::NEG_INFINITY,
        max_loading_pct: 0.0,
        scheduled_violation_slots: 0,
        violation_slots: 0,
        under_voltage_slots: 0,
        over_voltage_slots: 0,
        overload_slots: 0,
        coordinated_slots: 0,
        unresolved_slots: 0,
        curtailed: CurtailedEnergy::default(),
        ev_energy_kwh: 0.0,
        ev_satisfaction: 1.0,
        tank_satisfaction: 1.0,
        max_abs_tank_dt_c: 0.0,
        total_objective_eur: 0.0,
        relaxation: None,
        slot_min_voltage_pu: Vec::with_capacity(records.len()),
        slot_max_voltage_pu: Vec::with_capacity(records.len()),
        slot_max_loading_pct: Vec::with_capacity(records.len()),
        voltage_cdf: Vec::new(),
        loading_cdf: Vec::new(),
    };
    let mut relax: Option<(RelaxationStats, f64, usize)> = None;
    let mut tank_ok = vec![true; households.len()];

    for rec in records {
        if rec.grid_state_source != GridStateSource::PowerFlow {
            return Err(ReportError::Provenance(rec.slot));
        }
        let flow = &rec.applied_flow;
        let vm = flow.voltage_magnitudes();
        let loading = flow.loading_pct(grid);
        let vmin = vm.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = vm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lmax = loading.iter().copied().fold(0.0, f64::max);
        s.slot_min_voltage_pu.push(vmin);
        s.slot_max_voltage_pu.push(vmax);
        s.slot_max_loading_pct.push(lmax);
        s.min_voltage_pu = s.min_voltage_pu.min(vmin);
        s.max_voltage_pu = s.max_voltage_pu.max(vmax);
        s.max_loading_pct = s.max_loading_pct.max(lmax);
        s.voltage_cdf.extend(vm);
        s.loading_cdf.extend(loading);

        s.scheduled_violation_slots += usize::from(!rec.pre_violations.is_empty());
        s.violation_slots += usize::from(!rec.post_violations.is_empty());
        let has = |f: fn(&LimitViolation) -> bool| rec.post_violations.iter().any(f);
        s.under_voltage_slots += usize::from(has(|v| matches!(v, LimitViolation::UnderVoltage { .. })));
        s.over_voltage_slots += usize::from(has(|v| matches!(v, LimitViolation::OverVoltage { .. })));
        s.overload_slots += usize::from(has(|v| matches!(v, LimitViolation::Overload { .. })));
        s.coordinated_slots += usize::from(rec.coordinated);
        s.unresolved_slots += usize::from(rec.unresolved);

        let dt = rec.slot_hours;
        for (c, set) in rec.curtailments.iter().zip(&rec.setpoints) {
            s.curtailed.ev_kwh += c.ev_down * dt;
            s.curtailed.pv_kwh += c.pv_down * dt;
            s.curtailed.hp_down_kwh += c.hp_down * dt;
            s.curtailed.hp_up_kwh += c.hp_up * dt;
            s.ev_energy_kwh += set.p_ev * dt;
        }

        for ((ok, st), hh) in tank_ok.iter_mut().zip(&rec.states_after).zip(households) {
            if hh.params.has_hp() {
                s.max_abs_tank_dt_c = s.max_abs_tank_dt_c.max(st.tank_dt.abs());
                if st.tank_dt.abs() > hh.params.tank_band + 1e-9 {
                    *ok = false;
                }
            }
        }

        if let Some(d) = &rec.diagnostics {
            s.total_objective_eur += d.objective_eur;
            let (stats, sum, count) = relax.get_or_insert((
                RelaxationStats {
                    max_voltage_discrepancy_pu: 0.0,
                    min_loading_overestimate: f64::INFINITY,
                    max_loading_overestimate: f64::NEG_INFINITY,
                    mean_loading_overestimate: 0.0,
                    min_relaxation_gap: f64::INFINITY,
                    max_relaxation_gap: f64::NEG_INFINITY,
                },
                0.0,
                0,
            ));
            stats.max_voltage_discrepancy_pu =
                stats.max_voltage_discrepancy_pu.max(d.max_voltage_discrepancy());
            for &o in &d.loading_overestimate {
                stats.min_loading_overestimate = stats.min_loading_overestimate.min(o);
                stats.max_loading_overestimate = stats.max_loading_overestimate.max(o);
                *sum += o;
                *count += 1;
            }
            stats.min_relaxation_gap = stats.min_relaxation_gap.min(d.min_gap());
            stats.max_relaxation_gap = stats.max_relaxation_gap.max(d.max_gap());
        }
    }
    s.relaxation = relax.map(|(mut stats, sum, count)| {
        stats.mean_loading_overestimate = if count > 0 { sum / count as f64 } else { 0.0 };
        stats
    });

    let last = records.last().expect("nonempty");
    let mut evs = 0usize;
    let mut full = 0usize;
    for (h, hh) in households.iter().enumerate() {
        if !hh.params.has_ev() {
            continue;
        }
        evs += 1;
        let dep = last.states_after[h].ev_departure_slot;
        let at_departure = records
            .iter()
            .find(|r| r.slot + 1 == dep)
            .unwrap_or(last);
        if at_departure.states_after[h].ev_soc >= 1.0 - FULL_SOC_TOL {
            full += 1;
        }
    }
    if evs > 0 {
        s.ev_satisfaction = full as f64 / evs as f64;
    }
    let hps = households.iter().filter(|h| h.params.has_hp()).count();
    if hps > 0 {
        let ok = tank_ok
            .iter()
            .zip(households)
            .filter(|(ok, hh)| **ok && hh.params.has_hp())
            .count();
        s.tank_satisfaction = ok as f64 / hps as f64;
    }

    s.voltage_cdf.sort_by(f64::total_cmp);
    s.loading_cdf.sort_by(f64::total_cmp);
    Ok(s)
}

/// Formats with nine significant digits, trimming trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let v: f64 = sci.parse().unwrap_or(x);
    let exp = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let prec = (8 - exp).max(0) as usize;
    let mut s = format!("{v:.prec$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Rounds to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(f) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(f)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to nine significant digits.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_json(&mut v);
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

pub const SLOTS_HEADER: &str = "slot,coordinated,unresolved,scheduled_violations,applied_violations,\
min_voltage_pu,max_voltage_pu,max_loading_pct,scheduled_min_voltage_pu,scheduled_max_loading_pct,\
ev_curtailed_kw,pv_curtailed_kw,hp_up_kw,hp_down_kw,objective_eur,max_voltage_discrepancy_pu,\
min_loading_overestimate_pu2,max_relaxation_gap_pu2";

fn slots_csv(summary: &RunSummary, records: &[SlotRecord], grid: &Grid) -> String {
    let mut out = String::from(SLOTS_HEADER);
    out.push('\n');
    for (i, rec) in records.iter().enumerate() {
        let sched_v = rec.scheduled_flow.voltage_magnitudes().into_iter().fold(f64::INFINITY, f64::min);
        let sched_l = rec.scheduled_flow.loading_pct(grid).into_iter().fold(0.0, f64::max);
        let sum = |f: fn(&crate::socp::Curtailment) -> f64| rec.curtailments.iter().map(f).sum::<f64>();
        let (obj, dv, lo, gap) = match &rec.diagnostics {
            Some(d) => (
                fmt_sig(d.objective_eur),
                fmt_sig(d.max_voltage_discrepancy()),
                fmt_sig(d.min_loading_overestimate()),
                fmt_sig(d.max_gap()),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.slot,
            u8::from(rec.coordinated),
            u8::from(rec.unresolved),
            rec.pre_violations.len(),
            rec.post_violations.len(),
            fmt_sig(summary.slot_min_voltage_pu[i]),
            fmt_sig(summary.slot_max_voltage_pu[i]),
            fmt_sig(summary.slot_max_loading_pct[i]),
            fmt_sig(sched_v),
            fmt_sig(sched_l),
            fmt_sig(sum(|c| c.ev_down)),
            fmt_sig(sum(|c| c.pv_down)),
            fmt_sig(sum(|c| c.hp_up)),
            fmt_sig(sum(|c| c.hp_down)),
            obj,
            dv,
            lo,
            gap,
        );
    }
    out
}

fn cdf_csv(header: &str, sorted: &[f64]) -> String {
    let mut out = format!("{header},cumulative_fraction\n");
    let n = sorted.len() as f64;
    for (i, v) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{},{}", fmt_sig(*v), fmt_sig((i + 1) as f64 / n));
    }
    out
}

/// Writes the four report files into `out_dir`, creating it if needed.
pub fn emit(
    summary: &RunSummary,
    records: &[SlotRecord],
    grid: &Grid,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let files = [
        ("slots.csv", slots_csv(summary, records, grid)),
        ("cdf_voltage.csv", cdf_csv("voltage_pu_per_bus_and_slot", &summary.voltage_cdf)),
        ("cdf_loading.csv", cdf_csv("loading_pct_per_line_and_slot", &summary.loading_cdf)),
        ("summary.json", to_json(summary)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Headline figures of an uncontrolled and a coordinated run side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub uncontrolled_min_voltage_pu: f64,
    pub coordinated_min_voltage_pu: f64,
    pub uncontrolled_max_loading_pct: f64,
    pub coordinated_max_loading_pct: f64,
    pub uncontrolled_violation_slots: usize,
    pub coordinated_violation_slots: usize,
    pub coordinated_slots: usize,
    pub unresolved_slots: usize,
    pub ev_satisfaction: f64,
    pub tank_satisfaction: f64,
    pub curtailed: CurtailedEnergy,
}

pub fn compare(uncontrolled: &RunSummary, coordinated: &RunSummary) -> Comparison {
    Comparison {
        uncontrolled_min_voltage_pu: uncontrolled.min_voltage_pu,
        coordinated_min_voltage_pu: coordinated.min_voltage_pu,
        uncontrolled_max_loading_pct: uncontrolled.max_loading_pct,
        coordinated_max_loading_pct: coordinated.max_loading_pct,
        uncontrolled_violation_slots: uncontrolled.violation_slots,
        coordinated_violation_slots: coordinated.violation_slots,
        coordinated_slots: coordinated.coordinated_slots,
        unresolved_slots: coordinated.unresolved_slots,
        ev_satisfaction: coordinated.ev_satisfaction,
        tank_satisfaction: coordinated.tank_satisfaction,
        curtailed: coordinated.curtailed,
    }
}
