use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dercoord(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dercoord"))
        .args(args)
        .env_remove("DERCOORD_LOG")
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn coordinated_acceptance_run_resolves_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = dercoord(&["run", "--scenario", "acceptance", "--mode", "coordinated", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["violation_slots"], 0);
    assert_eq!(s["unresolved_slots"], 0);
    assert!(s["coordinated_slots"].as_u64().unwrap() > 0);
    assert!(s["min_voltage_pu"].as_f64().unwrap() >= 0.9 - 5e-4);
    for f in ["slots.csv", "cdf_voltage.csv", "cdf_loading.csv"] {
        assert!(out.join(f).is_file());
    }
}

#[test]
fn uncontrolled_acceptance_run_violates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dercoord(&["run", "--mode", "uncontrolled", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let s = summary(tmp.path());
    assert!(s["violation_slots"].as_u64().unwrap() > 0);
    assert!(s["under_voltage_slots"].as_u64().unwrap() > 0);
    assert!(s["overload_slots"].as_u64().unwrap() > 0);
}

#[test]
fn malformed_grid_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("grid.json");
    fs::write(&path, "{\n  \"base_power_va\": 100000,\n  \"buses\": [,]\n}\n").unwrap();
    let o = dercoord(&["validate", "--grid", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn topology_problems_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("grid.csv");
    fs::write(&path, "from,to,r_ohm,x_ohm,i_max_a\n0,1,0.05,0.02,100\n1,2,0.05,0.02,100\n2,0,0.05,0.02,100\n").unwrap();
    let o = dercoord(&["validate", "--grid", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dercoord(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dercoord(&["run", "--out", "x", "--set", "seed=1"]).status.code(), Some(2));
    assert_eq!(dercoord(&["run", "--out", "x", "--mode", "sometimes"]).status.code(), Some(2));
    assert_eq!(dercoord(&["run", "--out", "x", "--scenario", "no-such-thing"]).status.code(), Some(2));
    assert_eq!(dercoord(&["validate"]).status.code(), Some(2));
}

#[test]
fn generate_then_run_matches_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    assert!(dercoord(&["generate", "--scenario", "acceptance", "--out", &p("bundle")]).status.success());
    assert!(dercoord(&["validate", "--scenario", &p("bundle")]).status.success());
    assert!(dercoord(&["run", "--scenario", &p("bundle"), "--out", &p("a")]).status.success());
    assert!(dercoord(&["run", "--scenario", "acceptance", "--out", &p("b")]).status.success());
    assert_eq!(fs::read(tmp.path().join("a/slots.csv")).unwrap(), fs::read(tmp.path().join("b/slots.csv")).unwrap());
    // Generation settings are frozen in a bundle.
    assert_eq!(
        dercoord(&["run", "--scenario", &p("bundle"), "--set", "hp_peak_kw=3", "--out", &p("c")]).status.code(),
        Some(2)
    );
}

#[test]
fn compare_writes_both_runs_and_the_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dercoord(&["compare", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(tmp.path().join("uncontrolled/summary.json").is_file());
    assert!(tmp.path().join("coordinated/summary.json").is_file());
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("compare.json")).unwrap()).unwrap();
    assert!(cmp["uncontrolled_violation_slots"].as_u64().unwrap() > 0);
    assert_eq!(cmp["coordinated_violation_slots"], 0);
}

#[test]
fn overrides_and_seed_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    assert!(dercoord(&["run", "--mode", "uncontrolled", "--out", &p("base")]).status.success());
    assert!(dercoord(&["run", "--mode", "uncontrolled", "--seed", "7", "--out", &p("seed")]).status.success());
    assert!(dercoord(&["run", "--mode", "uncontrolled", "--set", "vmin_pu=0.85", "--out", &p("vmin")]).status.success());
    let base = summary(&tmp.path().join("base"));
    assert_ne!(base["min_voltage_pu"], summary(&tmp.path().join("seed"))["min_voltage_pu"]);
    assert_eq!(summary(&tmp.path().join("vmin"))["under_voltage_slots"], 0);
}

#[test]
fn config_file_scenario_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scenario.json");
    fs::write(&cfg, r#"{"n_households": 3, "feeder": {"type": "star", "r_ohm": 0.03, "x_ohm": 0.01, "i_max_a": 150}}"#).unwrap();
    let o = dercoord(&["run", "--scenario", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&tmp.path().join("o"));
    assert_eq!(s["slots"], 96);
}
