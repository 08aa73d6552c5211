mod common;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aggshock::exposures::construct_exposures;
use aggshock::panel::{default_t0, read_panel_csv, write_panel_csv, AggregateData, ExposureVector};
use aggshock::sim::{simulate_once, synthetic_spec, Design};
use nalgebra::DVector;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aggshock"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

/// Design-3 panel with a constructed `d` column.
fn write_panel(dir: &Path, with_d: bool) -> PathBuf {
    let spec = synthetic_spec(30, 24, 5).with_design(Design::Three);
    let draw = simulate_once(&spec, 8);
    let agg = AggregateData::constant_mean(draw.z.clone()).unwrap();
    let d = construct_exposures(&draw.panel, &agg, default_t0(spec.t)).unwrap().d;
    let path = dir.join(if with_d { "panel.csv" } else { "panel_nod.csv" });
    write_panel_csv(File::create(&path).unwrap(), &draw.panel, &agg, with_d.then_some(&d)).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn estimate_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let out = dir.path().join("est");
    let o = run(bin().args(["estimate", "--panel"]).arg(&panel).args(["--tau0", "1.43", "--ci", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["estimate.json", "weights.csv", "balance.csv", "aggregates.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = json(&out.join("estimate.json"));
    let (delta, pi, tau) = (report["delta"].as_f64().unwrap(), report["pi"].as_f64().unwrap(), report["tau"].as_f64().unwrap());
    assert!((tau * pi - delta).abs() < 1e-12);
    assert_eq!(report["config"]["exposures"], "column");
    assert_eq!(report["T0"], 8);
    assert_eq!(report["tests"].as_array().unwrap().len(), 1);
    assert!(report["confidence_set"]["intervals"].as_array().is_some());

    let mut rdr = csv::Reader::from_path(out.join("weights.csv")).unwrap();
    let omega: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(omega.len(), 30);
    assert!(omega.iter().sum::<f64>().abs() < 1e-9);
    let loaded = read_panel_csv(File::open(&panel).unwrap()).unwrap();
    let d = loaded.exposure.unwrap();
    let dot: f64 = omega.iter().zip(d.values().iter()).map(|(w, d)| w * d).sum();
    assert!((dot / 30.0 - 1.0).abs() < 1e-9);

    let mut rdr = csv::Reader::from_path(out.join("aggregates.csv")).unwrap();
    assert_eq!(rdr.records().count(), 24 - 8);
}

#[test]
fn repeated_estimates_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(bin().args(["estimate", "--panel"]).arg(&panel).args(["--tau0", "0", "--out"]).arg(&out));
        assert!(o.status.success());
        reports.push(fs::read(out.join("estimate.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn exposures_are_constructed_without_a_d_column() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), false);
    let out = dir.path().join("est");
    let o = run(bin().args(["estimate", "--panel"]).arg(&panel).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("estimate.json"))["config"]["exposures"], "constructed");

    let o = run(bin().args(["exposures", "--panel"]).arg(&panel));
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("unit,d,se,r2"));
    assert_eq!(lines.count(), 30);

    let o = run(bin().args(["estimate", "--d-col", "--panel"]).arg(&panel).arg("--out").arg(dir.path().join("x")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"t0": {"fixed": 10}, "alpha": 0.1, "tau0": [1.0, 2.0]}"#).unwrap();
    let out = dir.path().join("est");
    let o = run(bin().args(["estimate", "--panel"]).arg(&panel).arg("--config").arg(&cfg).args(["--alpha", "0.2", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("estimate.json"));
    assert_eq!(report["T0"], 10);
    assert_eq!(report["config"]["alpha"], 0.2);
    assert_eq!(report["tests"].as_array().unwrap().len(), 2);

    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let o = run(bin().args(["estimate", "--panel"]).arg(&panel).arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_two_and_leave_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let out = dir.path().join("bad");
    let o = run(bin().args(["estimate", "--panel"]).arg(&panel).args(["--zeta=-1", "--out"]).arg(&out));
    assert_eq!(o.status.code(), Some(2));
    let err = json(&out.join("error.json"));
    assert_eq!(err["kind"], "InvalidInput");
    assert!(String::from_utf8_lossy(&o.stderr).contains("zeta"));

    // Drop one row to unbalance the panel.
    let text = fs::read_to_string(&panel).unwrap();
    let holed: Vec<&str> = text.lines().enumerate().filter(|(k, _)| *k != 5).map(|(_, l)| l).collect();
    let holed_path = dir.path().join("holed.csv");
    fs::write(&holed_path, holed.join("\n")).unwrap();
    let o = run(bin().args(["estimate", "--panel"]).arg(&holed_path).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out.join("error.json"))["kind"], "UnbalancedPanel");

    let o = run(bin().args(["simulate", "--design", "7"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synthetic_spec(12, 15, 1);
    let draw = simulate_once(&spec, 2);
    let agg = AggregateData::constant_mean(draw.z.clone()).unwrap();
    let constant = ExposureVector::new(DVector::from_element(12, 1.0)).unwrap();
    let path = dir.path().join("flat.csv");
    write_panel_csv(File::create(&path).unwrap(), &draw.panel, &agg, Some(&constant)).unwrap();
    let out = dir.path().join("out");
    let o = run(bin().args(["estimate", "--panel"]).arg(&path).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("error.json").exists());
}

#[test]
fn diagnose_reports_representation_gap_and_conditioning() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let o = run(bin().args(["diagnose", "--panel"]).arg(&panel));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["representation_gap"].as_f64().unwrap() < 1e-10);
    assert!(report["condition_pre"].as_f64().unwrap() >= 1.0);
    assert!(report["condition_post"].as_f64().unwrap() >= 1.0);
    assert!(report["balance"]["ratio_y"].as_f64().unwrap() < 1.0);
    assert_eq!(report["zeta"], report["zeta_default"]);
}

#[test]
fn simulate_writes_reports_and_error_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.json");
    let dump = dir.path().join("errors.csv");
    let o = run(bin()
        .args(["simulate", "--design", "3", "--reps", "12", "--seed", "4", "--synthetic", "15,12", "--out"])
        .arg(&out)
        .arg("--dump-errors")
        .arg(&dump));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    let designs = report["designs"].as_array().unwrap();
    assert_eq!(designs.len(), 1);
    assert_eq!(designs[0]["design"], 3);
    assert_eq!(designs[0]["reps"], 12);
    assert!(designs[0].get("errors").is_none());
    assert_eq!(report["config"]["simulation"]["n"], 15);
    let mut rdr = csv::Reader::from_path(&dump).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 9);
    assert_eq!(rdr.records().count(), 12);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("tau_tsls") && table.contains("reject"));
}

#[test]
fn simulate_calibrates_to_a_panel() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let out = dir.path().join("cal.json");
    let o = run(bin().args(["simulate", "--design", "1", "--reps", "5", "--rank", "4", "--calibrate"]).arg(&panel).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    assert_eq!(report["config"]["simulation"]["T"], 24);
    assert_eq!(report["config"]["simulation"]["rank"], 4);

    let o = run(bin().args(["simulate", "--reps", "5", "--rank", "40", "--calibrate"]).arg(&panel));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn nothing_is_written_outside_the_output_paths() {
    let dir = tempfile::tempdir().unwrap();
    let panel = write_panel(dir.path(), true);
    let before: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let o = run(bin().current_dir(dir.path()).args(["diagnose", "--panel"]).arg(&panel));
    assert!(o.status.success());
    let o = run(bin().current_dir(dir.path()).args(["simulate", "--reps", "3", "--synthetic", "12,12"]));
    assert!(o.status.success());
    let after: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before, after);
}
