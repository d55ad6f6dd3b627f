use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wassoed"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn presets_parse_and_resolve() {
    for dir in [configs(), configs().join("full-scale")] {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let c = wassoed::Config::load(&path).unwrap();
                c.resolved().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            }
        }
    }
}

#[test]
fn distance_prints_closed_form_and_echoes_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("distance-gaussian.json");
    let o = run(&["distance", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 2f64.sqrt()).abs() < 1e-12);
    let echo = wassoed::Config::load(&out.path().join("config.resolved.json")).unwrap();
    assert_eq!(echo.output_dir, out.path());
    assert_eq!(echo.resolved().unwrap(), echo);
}

#[test]
fn grid_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"experiment": "example1-grid", "criteria": ["W2"], "grid": {"nodes": [3, 3]},
            "estimator": {"monte_carlo_samples": 50, "inner_resolution": 257}}"#,
    );
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = run(&["grid", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read_to_string(out.join("grid_W2.csv")).unwrap());
        for f in ["grid_W2.svg", "summary.csv", "provenance.json", "config.resolved.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }
    assert_eq!(csvs[0], csvs[1]);
    let lines: Vec<&str> = csvs[0].lines().collect();
    assert_eq!(lines[0], "theta1,theta2,value,stderr");
    assert_eq!(lines.len(), 10);
}

#[test]
fn linear_grid_on_one_axis_leaves_theta2_blank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"experiment": "linear1d-utility", "criteria": ["W2"], "grid": {"nodes": [3]}}"#);
    let out = dir.path().join("out");
    let o = run(&["grid", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("grid_W2.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[1], "");
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{"experiment": "distance", "colour": 1}"#);
    assert_eq!(run(&["distance", "--config", &unknown]).status.code(), Some(2));
    let wrong = configs().join("distance-gaussian.json");
    assert_eq!(run(&["grid", "--config", wrong.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    write(dir.path(), "bad.csv", "w,x1\n1,0\n1,oops\n");
    let cfg = write(
        dir.path(),
        "d.json",
        r#"{"experiment": "distance", "distance": {"a": {"csv": {"path": "bad.csv"}}, "b": {"csv": {"path": "bad.csv"}}}}"#,
    );
    let o = run(&["distance", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn solver_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // Far beyond the exact solver's capacity.
    let pts: Vec<String> = (0..2100).map(|i| format!("[{i}, 0]")).collect();
    let text = format!(
        r#"{{"experiment": "distance", "distance": {{"a": {{"empirical": {{"points": [{0}]}}}}, "b": {{"empirical": {{"points": [{0}]}}}}}}}}"#,
        pts.join(",")
    );
    let cfg = write(dir.path(), "c.json", &text);
    let o = run(&["distance", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selfcheck_reports_each_criterion() {
    let o = run(&["selfcheck", "--criteria", "9"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("criterion 9 PASS"));
    assert_eq!(run(&["selfcheck", "--criteria", "12"]).status.code(), Some(2));
}

#[test]
fn transport_writes_map_and_potential() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("transport-2d.json");
    let o = run(&["transport", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = std::fs::read_to_string(out.path().join("map.csv")).unwrap();
    let first: Vec<f64> = map.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // The source mean maps to the target mean.
    assert!((first[2] - 1.0).abs() < 5e-3 && (first[3] - 0.5).abs() < 5e-3, "{first:?}");
    assert!(out.path().join("potential.csv").exists());
}
