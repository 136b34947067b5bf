//! `--set key=value` handling.

use std::fmt;

use dercoord::operation::SimConfig;
use dercoord::scenario::ScenarioConfig;
use serde_json::Value;

/// Keys accepted by `--set` that tune scenario generation.
pub const SCENARIO_KEYS: &[&str] = &[
    "n_households",
    "ev_arrival_mean",
    "ev_arrival_std",
    "ev_daily_energy_kwh",
    "pv_rating_kw",
    "hp_peak_kw",
    "hp_p_max_kw",
    "base_load_peak_kw",
    "tank_band_c",
    "vmin_pu",
    "vmax_pu",
    "slack_v_pu",
];

/// Keys accepted by `--set` that tune the simulation.
pub const SIM_KEYS: &[&str] = &["c_loss", "c_pv", "c0", "hp_floor", "hp_slope", "limit_margin"];

/// `cop` feeds both the tank sizing and the tank model.
pub const SHARED_KEYS: &[&str] = &["cop"];

#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: f64,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn allowed() -> impl Iterator<Item = &'static str> {
    SCENARIO_KEYS.iter().chain(SIM_KEYS).chain(SHARED_KEYS).copied()
}

pub fn parse(s: &str) -> Result<Override, String> {
    let (key, value) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let key = key.trim();
    if !allowed().any(|k| k == key) {
        let keys: Vec<&str> = allowed().collect();
        return Err(format!("`{key}` cannot be overridden; allowed keys: {}", keys.join(", ")));
    }
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("value of `{key}` is not a number: `{value}`"))?;
    if !value.is_finite() {
        return Err(format!("value of `{key}` must be finite"));
    }
    Ok(Override { key: key.to_string(), value })
}

fn set_field<T>(target: &mut T, key: &str, value: f64) -> Result<(), UsageError>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut json = serde_json::to_value(&*target).expect("config serializes");
    let obj = json.as_object_mut().expect("config is an object");
    let slot = obj.get_mut(key).ok_or_else(|| UsageError(format!("unknown key `{key}`")))?;
    *slot = if slot.is_u64() {
        if value < 0.0 || value.fract() != 0.0 {
            return Err(UsageError(format!("`{key}` must be a non-negative integer")));
        }
        Value::from(value as u64)
    } else {
        Value::from(value)
    };
    *target = serde_json::from_value(json).map_err(|e| UsageError(format!("`{key}`: {e}")))?;
    Ok(())
}

/// Applies the scenario-generation overrides.
pub fn apply_scenario(config: &mut ScenarioConfig, overrides: &[Override]) -> Result<(), UsageError> {
    for o in overrides {
        if SCENARIO_KEYS.contains(&o.key.as_str()) || SHARED_KEYS.contains(&o.key.as_str()) {
            set_field(config, &o.key, o.value)?;
        }
    }
    Ok(())
}

/// Applies the simulation overrides.
pub fn apply_sim(config: &mut SimConfig, overrides: &[Override]) -> Result<(), UsageError> {
    for o in overrides {
        match o.key.as_str() {
            "limit_margin" => {
                if !(o.value >= 0.0) {
                    return Err(UsageError("`limit_margin` must be non-negative".into()));
                }
                config.limit_margin = o.value;
            }
            "cop" => {
                if !(o.value > 0.0) {
                    return Err(UsageError("`cop` must be positive".into()));
                }
                config.cop = o.value;
            }
            key if SIM_KEYS.contains(&key) => set_field(&mut config.costs, key, o.value)?,
            _ => {}
        }
    }
    Ok(())
}

/// Overrides that only make sense when the scenario is generated.
pub fn scenario_only(overrides: &[Override]) -> Vec<&str> {
    overrides
        .iter()
        .filter(|o| SCENARIO_KEYS.contains(&o.key.as_str()))
        .map(|o| o.key.as_str())
        .collect()
}
