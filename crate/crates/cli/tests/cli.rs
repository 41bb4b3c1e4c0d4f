use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn drbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drbsde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_on(cmd: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    drbsde(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_gap_fixture_reports_y0_one() {
    let dir = TempDir::new().unwrap();
    let out = run_on("solve", &fixture("gap.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["y0"].as_f64(), Some(1.0));
    assert_eq!(report["passes"], Value::Bool(true));
    assert!(dir.path().join("solution.csv").exists());
}

#[test]
fn game_value_depends_on_systems_flag() {
    let dir = TempDir::new().unwrap();
    let out = run_on("game", &fixture("gap.json"), dir.path(), &["--systems"]);
    assert_eq!(out.status.code(), Some(0));
    let g = json(&dir.path().join("game.json"));
    assert_eq!(g["value"].as_f64(), Some(1.0));
    assert_eq!(g["y0"].as_f64(), Some(1.0));

    let out = run_on("game", &fixture("gap.json"), dir.path(), &[]);
    // Over stopping times the irregular barrier is out of reach: value 0, not Y0.
    assert_eq!(out.status.code(), Some(0));
    let g = json(&dir.path().join("game.json"));
    assert_eq!(g["value"].as_f64(), Some(0.0));
    assert_eq!(g["characterized"], Value::Bool(false));
}

#[test]
fn game_with_epsilon_and_theta() {
    let dir = TempDir::new().unwrap();
    let out = run_on(
        "game",
        &fixture("gap.json"),
        dir.path(),
        &["--systems", "--epsilon", "0.1", "--theta", "root"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g = json(&dir.path().join("game.json"));
    assert!(g["epsilon_saddle"].is_object());
    assert_eq!(g["passes"], Value::Bool(true));
}

#[test]
fn solve_then_verify_round_trips() {
    for name in ["gap.json", "barrier_call.json", "basket.json", "hedge.json"] {
        let dir = TempDir::new().unwrap();
        let s = run_on("solve", &fixture(name), dir.path(), &[]);
        assert_eq!(s.status.code(), Some(0), "{name}");
        let v = run_on("verify", &fixture(name), dir.path(), &[]);
        assert_eq!(v.status.code(), Some(0), "{name}");
        let solved = json(&dir.path().join("report.json"));
        let verified = json(&dir.path().join("verify.json"));
        assert_eq!(solved["verification"], verified["verification"], "{name}");
        assert_eq!(solved["y0"], verified["y0"], "{name}");
    }
}

#[test]
fn verify_rejects_a_tampered_table() {
    let dir = TempDir::new().unwrap();
    run_on("solve", &fixture("hedge.json"), dir.path(), &[]);
    let path = dir.path().join("solution.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    let y: f64 = cells[3].parse().unwrap();
    cells[3] = (y + 0.5).to_string();
    lines[1] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let v = run_on("verify", &fixture("hedge.json"), dir.path(), &[]);
    assert_eq!(v.status.code(), Some(2));
    assert_eq!(json(&dir.path().join("verify.json"))["passes"], Value::Bool(false));
}

#[test]
fn price_emits_hedge_that_superhedges() {
    let dir = TempDir::new().unwrap();
    let out = run_on("price", &fixture("hedge.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let p = json(&dir.path().join("price.json"));
    assert_eq!(p["hedgeable"], Value::Bool(true));
    assert_eq!(p["superhedge_star"]["passes"], Value::Bool(true));
    assert_eq!(p["superhedge_bar"]["passes"], Value::Bool(true));
    let solved = {
        run_on("solve", &fixture("hedge.json"), dir.path(), &[]);
        json(&dir.path().join("report.json"))
    };
    assert_eq!(p["u0"], solved["y0"]);
    let table = fs::read_to_string(dir.path().join("hedge.csv")).unwrap();
    assert_eq!(table.lines().count(), 14);
}

#[test]
fn price_on_irregular_builder_gives_price_without_hedge() {
    let dir = TempDir::new().unwrap();
    let out = run_on("price", &fixture("barrier_call.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let p = json(&dir.path().join("price.json"));
    assert!(p["u0"].as_f64().unwrap() > 0.0);
    assert_eq!(p["hedgeable"], Value::Bool(false));
}

#[test]
fn price_without_market_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = run_on("price", &fixture("gap.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ref_writes_snell_envelope() {
    let dir = TempDir::new().unwrap();
    let out = run_on("ref", &fixture("gap.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let mut r = csv::Reader::from_path(dir.path().join("ref.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let x_at = headers.iter().position(|h| h == "x_at").unwrap();
    let first = r.records().next().unwrap().unwrap();
    assert_eq!(first[x_at].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn fuzz_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = drbsde(&["fuzz", "--seed", "7", "--n", "40", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ra = fs::read(a.path().join("fuzz_report.json")).unwrap();
    let rb = fs::read(b.path().join("fuzz_report.json")).unwrap();
    assert_eq!(ra, rb);
    assert!(!a.path().join("repro.json").exists());
}

#[test]
fn malformed_scenario_gives_line_anchored_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(fixture("gap.json")).unwrap();
    fs::write(&bad, text.replace("\"lambda\"", "\"lamda\"")).unwrap();
    let out = run_on("solve", &bad, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:2:"), "{err}");
    assert!(err.contains("lamda"), "{err}");
}

#[test]
fn inadmissible_barriers_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("crossed.json");
    let text = fs::read_to_string(fixture("gap.json")).unwrap();
    fs::write(&bad, text.replace("\"zeta\": {\"at\": [2.0,", "\"zeta\": {\"at\": [-2.0,")).unwrap();
    let out = run_on("solve", &bad, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(drbsde(&["solve"]).status.code(), Some(1));
    assert_eq!(drbsde(&["launch"]).status.code(), Some(1));
    assert_eq!(drbsde(&["--help"]).status.code(), Some(0));
    assert_eq!(drbsde(&["--version"]).status.code(), Some(0));
}
