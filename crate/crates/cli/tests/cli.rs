use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonlocal_cli::config::{parse_config, KERNEL_KINDS};
use nonlocal_core::rearrange::GridFunction;
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_nonlocal");

/// Non-monotone kernel profile: cell-averaging and rearranging do not
/// commute for it, so coarse grids show a small positive comparison slack.
const NON_MONOTONE_TABLE: &str = "radius,value\n0.6,4.6\n0.9,4.2\n1.1,3.4\n1.7,0.35\n1.8,0.9\n";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("NONLOCAL_THREADS", "2").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn checks(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("checks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn two_intervals(n: usize, extra: &str) -> String {
    format!(
        r#"{{
        "schema": 1,
        "dimension": 1,
        "domain": {{"kind": "intervals", "intervals": [[-1, -0.2], [0.2, 1]]}},
        "grid": {{"n": {n}}},
        "kernel": {{"kind": "fractional", "s": 0.5}}{extra}
    }}"#
    )
}

fn coarse_non_monotone(kappa_tol: f64) -> String {
    format!(
        r#"{{
        "schema": 1,
        "dimension": 1,
        "domain": {{"kind": "intervals", "intervals": [[-0.55, 0.25]]}},
        "grid": {{"n": 16}},
        "kernel": {{"kind": "tabulated", "table": "kernel.csv"}},
        "tolerances": {{"kappa_tol": {kappa_tol}}},
        "checks": ["check_comparison"]
    }}"#
    )
}

#[test]
fn minimal_config_gets_defaults_and_local_paths() {
    let dir = TempDir::new().unwrap();
    let cfg = parse_config(&write(dir.path(), "s.json", &two_intervals(64, ""))).unwrap();
    assert_eq!(cfg.tolerances.solver, 1e-10);
    assert_eq!(cfg.tolerances.kappa_tol, 0.05);
    assert_eq!(cfg.tolerances.max_iter, 20_000);
    assert_eq!(cfg.output, dir.path().join("out"));
    assert!(cfg.time.is_none());
}

#[test]
fn invalid_grid_size_is_named() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(100, r#", "checks": ["check_bogus"], "extra_key": 1"#);
    let o = run(&["solve-elliptic", write(dir.path(), "s.json", &text).to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("grid.n"), "{err}");
    // every problem is reported, not just the first
    assert!(err.contains("check_bogus"), "{err}");
    assert!(err.contains("extra_key"), "{err}");
}

#[test]
fn unknown_kernel_kind_lists_allowed_kinds() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(64, "").replace("\"fractional\"", "\"levy-flight\"");
    let o = run(&["verify", write(dir.path(), "s.json", &text).to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("levy-flight"));
    for k in KERNEL_KINDS {
        assert!(err.contains(k), "{k} missing from: {err}");
    }
}

#[test]
fn equality_configuration_gives_identical_curves() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
        "schema": 1,
        "dimension": 1,
        "domain": {"kind": "ball", "radius": 0.6},
        "grid": {"n": 64},
        "kernel": {"kind": "fractional", "s": 0.4},
        "coefficient": {"kind": "radial", "formula": "power", "exponent": 2},
        "source": {"kind": "radial", "formula": "gaussian", "width": 0.4}
    }"#;
    let o = run(&["solve-elliptic", write(dir.path(), "s.json", text).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("out/concentration.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["r", "conc_u_sharp", "conc_v", "diff"]);
    let mut rows = 0;
    for rec in rdr.records() {
        let diff: f64 = rec.unwrap()[3].parse().unwrap();
        assert!(diff.abs() <= 1e-9, "diff {diff}");
        rows += 1;
    }
    assert!(rows > 10);
}

#[test]
fn two_interval_scenario_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", &two_intervals(256, ""));
    let o = run(&["solve-elliptic", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["u.csv", "v.csv", "concentration.csv", "checks.jsonl", "diagnostics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("error.json").exists());
    let lines = checks(&out);
    let names: Vec<&str> = lines.iter().map(|l| l["check"].as_str().unwrap()).collect();
    assert_eq!(names, ["check_comparison", "check_energy_comparison"]);
    assert!(lines.iter().all(|l| l["pass"] == Value::Bool(true)));
    assert_eq!(lines[0]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_tolerance_on_coarse_grid_fails_with_radius() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "kernel.csv", NON_MONOTONE_TABLE);
    let cfg = write(dir.path(), "s.json", &coarse_non_monotone(0.0));
    let o = run(&["solve-elliptic", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(!out.join("error.json").exists());
    let lines = checks(&out);
    assert_eq!(lines.len(), 1);
    let rep = &lines[0];
    assert_eq!(rep["pass"], Value::Bool(false));
    assert!(rep["slack"].as_f64().unwrap() > 1e-5);
    assert_eq!(rep["worst_location"]["kind"], "radius");
    assert!(rep["worst_location"]["r"].as_f64().unwrap() > 0.0);

    // the same slack is within the default discretization allowance
    let cfg = write(dir.path(), "s2.json", &coarse_non_monotone(0.05));
    assert_eq!(code(&run(&["solve-elliptic", cfg.to_str().unwrap()])), 0);
}

#[test]
fn sweep_reports_decay_ratios() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "kernel.csv", NON_MONOTONE_TABLE);
    let cfg = write(dir.path(), "s.json", &coarse_non_monotone(0.05));
    let o = run(&["sweep", cfg.to_str().unwrap(), "--levels", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/sweep.json")).unwrap()).unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    assert_eq!(levels[0]["n"], 16);
    assert_eq!(levels[1]["n"], 32);
    let ratio = report["decay"]["check_comparison"]["ratios"][0].as_f64().unwrap();
    assert!(ratio >= 1.5, "ratio {ratio}");
    assert!(dir.path().join("out/level_1/checks.jsonl").exists());
}

#[test]
fn zero_source_has_zero_slack_at_every_level() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(
        32,
        r#", "source": {"kind": "constant", "value": 0}, "initial": {"kind": "constant", "value": 0},
        "time": {"final": 0.5, "steps": 4}"#,
    );
    let o = run(&["sweep", write(dir.path(), "s.json", &text).to_str().unwrap(), "--levels", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/sweep.json")).unwrap()).unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 3);
    for (k, l) in levels.iter().enumerate() {
        assert_eq!(l["steps"], 4 << k);
        let slacks = l["slacks"].as_object().unwrap();
        assert_eq!(slacks.len(), 3);
        for (name, s) in slacks {
            assert_eq!(s.as_f64().unwrap(), 0.0, "{name} at level {k}");
        }
    }
}

#[test]
fn memory_cap_refuses_before_running() {
    let dir = TempDir::new().unwrap();
    // levels: n = 256, 512, 1024; the last needs about 5 MiB for two operators
    let text = two_intervals(256, r#", "memory_cap_mb": 2"#);
    let o = run(&["sweep", write(dir.path(), "s.json", &text).to_str().unwrap(), "--levels", "3"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("level 2"), "{err}");
    let out = dir.path().join("out");
    assert!(!out.join("level_0").exists(), "nothing may run before the guard");
    let e: Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert!(e["error"].as_str().unwrap().contains("refusing"));
}

#[test]
fn checks_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(
        64,
        r#", "coefficient": {"kind": "radial", "formula": "power", "exponent": 1},
        "initial": {"kind": "radial", "formula": "bump", "center": [0.6], "width": 0.3},
        "time": {"final": 0.5, "steps": 4},
        "checks": ["check_comparison", "check_energy_comparison", "check_parabolic_comparison",
                   "check_polya_szego", "check_riesz", "check_coarea", "check_level_set_inequality",
                   "check_phi_monotonicity", "check_maxmin_lemma", "check_max_principle"],
        "seed": 11"#,
    );
    let cfg = write(dir.path(), "s.json", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["verify", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let ta = fs::read(a.join("checks.jsonl")).unwrap();
    assert_eq!(ta, fs::read(b.join("checks.jsonl")).unwrap());
    let lines = checks(&a);
    assert_eq!(lines.iter().filter(|l| l["check"] == "check_parabolic_comparison").count(), 4);
    assert!(a.join("trajectory_u/index.json").exists());
    assert!(a.join("trajectory_v/u_0004.csv").exists());
}

#[test]
fn parabolic_command_and_skipped_checks() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(
        64,
        r#", "initial": {"kind": "radial", "formula": "bump", "center": [-0.6], "width": 0.3},
        "source": {"kind": "constant", "value": 1, "time": {"kind": "sine", "amplitude": 0.5, "frequency": 3}},
        "time": {"final": 1, "steps": 8},
        "checks": ["check_parabolic_comparison", "check_energy_comparison"]"#,
    );
    let cfg = write(dir.path(), "s.json", &text);
    let o = run(&["solve-parabolic", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("SKIP check_energy_comparison"), "{stdout}");
    assert_eq!(checks(&dir.path().join("out")).len(), 8);

    // the elliptic command skips the parabolic check instead
    let o = run(&["solve-elliptic", cfg.to_str().unwrap(), "-o", dir.path().join("e").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let lines = checks(&dir.path().join("e"));
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["check"], "check_energy_comparison");
}

#[test]
fn execution_errors_write_error_json() {
    let dir = TempDir::new().unwrap();
    let text = coarse_non_monotone(0.05).replace("kernel.csv", "missing.csv");
    let o = run(&["solve-elliptic", write(dir.path(), "s.json", &text).to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let e: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/error.json")).unwrap()).unwrap();
    assert!(e["error"].as_str().unwrap().contains("missing.csv"));
    assert_eq!(e["exit_code"], 1);
}

#[test]
fn rearrange_round_trip() {
    let dir = TempDir::new().unwrap();
    let text = two_intervals(
        64,
        r#", "source": {"kind": "radial", "formula": "gaussian", "center": [0.5], "width": 0.3}"#,
    );
    let cfg = write(dir.path(), "s.json", &text);
    assert_eq!(code(&run(&["solve-elliptic", cfg.to_str().unwrap()])), 0);
    let u_path = dir.path().join("out/u.csv");
    let r1 = dir.path().join("r1.csv");
    let r2 = dir.path().join("r2.csv");
    for (a, b) in [(&u_path, &r1), (&r1, &r2)] {
        let o = run(&["rearrange", a.to_str().unwrap(), b.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    // rearranging is idempotent and preserves the distribution
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let u = GridFunction::read_csv(fs::File::open(&u_path).unwrap()).unwrap();
    let r = GridFunction::read_csv(fs::File::open(&r1).unwrap()).unwrap();
    assert!(r.grid().is_discrete_ball());
    assert_eq!(r.grid().masked_count(), u.grid().masked_count());
    let mut a: Vec<f64> = u.interior().iter().map(|x| x.abs()).collect();
    let mut b = r.interior();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    // and the file matches the solver's own v grid layout
    let v = GridFunction::read_csv(fs::File::open(dir.path().join("out/v.csv")).unwrap()).unwrap();
    assert_eq!(v.grid(), r.grid());
}
