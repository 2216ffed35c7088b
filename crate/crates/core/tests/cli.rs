//! Exit-code contract and artifact layout of the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smallgain")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &TempDir, name: &str, json: &str) -> String {
    fs::write(dir.path().join(name), json).unwrap();
    name.to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_example_verifies_one_cycle() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    let o = run(&["analyze", cfg.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let cycles = json(&dir.path().join("out/cycles.json"));
    assert_eq!(cycles["overall"], "verified");
    assert_eq!(cycles["cycles"].as_array().unwrap().len(), 1);
    let closed = json(&dir.path().join("out/closed_loop.json"));
    assert!(closed["gains"]["gs_sigma"]["1"].is_string());
    let manifest = json(&dir.path().join("out/manifest.json"));
    assert_eq!(manifest["subcommand"], "analyze");
    assert_eq!(manifest["exit_code"], 0);
    let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in &listed {
        assert!(dir.path().join("out").join(name).exists(), "{name} listed but missing");
    }
    assert!(listed.contains(&"config.json"));
}

#[test]
fn analyze_violation_exits_two_with_witness() {
    let dir = TempDir::new().unwrap();
    let cfg = config("violating_gain_2.json");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("witness"));
    let cycles = json(&dir.path().join("out/cycles.json"));
    let v = &cycles["cycles"][0]["verdict"];
    assert_eq!(v["verdict"], "violated_at");
    assert!(v["value"].as_f64().unwrap() > v["s"].as_f64().unwrap());
}

#[test]
fn analyze_inconclusive_exits_three() {
    let dir = TempDir::new().unwrap();
    let name = write_config(
        &dir,
        "tight.json",
        r#"{"subsystems": [{"rhs": ["-x_1"]}, {"rhs": ["-x_2"]}],
            "gains": {"edges": [{"i": 1, "j": 2, "gain": "0.95*s"}, {"i": 2, "j": 1, "gain": "s"}]},
            "checks": {"grid": {"margin": 0.1}}}"#,
    );
    let o = run(&["analyze", &name], dir.path());
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert_eq!(json(&dir.path().join("out/cycles.json"))["overall"], "inconclusive");
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["analyze", "missing.json"], dir.path())), 1);
    assert_eq!(code(&run(&["analyze"], dir.path())), 1);
    let bad = write_config(&dir, "bad.json", r#"{"subsystems": [{"rhs": ["-x_1 +"]}]}"#);
    let o = run(&["simulate", &bad], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("column"));
    let unknown = write_config(&dir, "unknown.json", r#"{"subsystems": [], "colour": 1}"#);
    assert_eq!(code(&run(&["verify", &unknown], dir.path())), 1);
    assert_eq!(code(&run(&["analyze", "--bogus-flag", "x.json"], dir.path())), 1);
    let cfg = config("example_three_loop.json");
    assert_eq!(code(&run(&["analyze", cfg.to_str().unwrap(), "--sweep", "delay:Nope=1,2"], dir.path())), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
    assert_eq!(code(&run(&["--version"], dir.path())), 0);
}

#[test]
fn simulate_example_writes_csv_that_decays() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,x_1,x_2,x_3");
    assert!(lines.len() > 2000);
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 20.0).abs() < 1e-9);
    assert!(last[1..].iter().all(|x| x.abs() < 1e-3));
    let meta = json(&dir.path().join("out/trajectory.json"));
    assert!(meta.is_object());
}

#[test]
fn simulate_zero_horizon_writes_history_only() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--horizon", "0", "--step", "0.25"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    // Header, history at t = -1, -0.75, -0.5, -0.25, then t = 0.
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().last().unwrap(), "0,1,1,1");
}

#[test]
fn simulate_blow_up_exits_four() {
    let dir = TempDir::new().unwrap();
    let cfg = config("blow_up.json");
    let o = run(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 4);
    let meta = json(&dir.path().join("out/trajectory.json"));
    let text = meta.to_string();
    assert!(text.contains("blow_up"), "{text}");
    let t: f64 = stdout(&o).split("at t = ").nth(1).unwrap().trim().parse().unwrap();
    assert!(t > 0.45 && t < 1.0, "escape reported at {t}");
}

#[test]
fn verify_example_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    let o = run(&["verify", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let reports = json(&dir.path().join("out/reports.json"));
    let n = reports.as_array().unwrap().len();
    // Three nominal checks plus four random-history GS checks.
    assert_eq!(n, 7);
}

#[test]
fn verify_weak_sigma_fails_with_gs_witness() {
    let dir = TempDir::new().unwrap();
    let cfg = config("weak_sigma.json");
    let o = run(&["verify", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 5);
    let reports = json(&dir.path().join("out/reports.json"));
    let gs = reports.as_array().unwrap().iter().find(|r| r["report"]["kind"] == "gs").unwrap();
    assert_eq!(gs["report"]["verdict"], "violated");
    assert!(gs["report"]["norm"].as_f64().unwrap() > gs["report"]["bound"].as_f64().unwrap());
}

#[test]
fn verify_refuses_without_small_gain() {
    let dir = TempDir::new().unwrap();
    let cfg = config("violating_gain_2.json");
    let o = run(&["verify", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("out/trajectory.csv").exists());
    assert!(!dir.path().join("out/reports.json").exists());

    let o = run(&["verify", cfg.to_str().unwrap(), "--force-simulate", "--out", "forced"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("forced/trajectory.csv").exists());
    assert!(!dir.path().join("forced/reports.json").exists());
    let manifest = json(&dir.path().join("forced/manifest.json"));
    assert_eq!(manifest["notes"].as_array().unwrap().len(), 1);
}

#[test]
fn sweeps_partition_outputs_and_report_worst_code() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    let o = run(&["analyze", cfg.to_str().unwrap(), "--sweep", "gain-scale=1,100"], dir.path());
    assert_eq!(code(&o), 2);
    let manifest = json(&dir.path().join("out/manifest.json"));
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs[0]["exit_code"], 0);
    assert_eq!(runs[1]["exit_code"], 2);
    assert!(dir.path().join("out/run_01/cycles.json").exists());

    let o = run(&["simulate", cfg.to_str().unwrap(), "--horizon", "2", "--sweep", "delay:Delta=0.5,1,2"], dir.path());
    assert_eq!(code(&o), 0);
    for (idx, delta) in [(0, 0.5), (1, 1.0), (2, 2.0)] {
        let cfg = json(&dir.path().join(format!("out/run_{idx:02}/config.json")));
        assert_eq!(cfg["delays"]["Delta"].as_f64().unwrap(), delta);
        let csv = fs::read_to_string(dir.path().join(format!("out/run_{idx:02}/trajectory.csv"))).unwrap();
        // History rows cover [-Delta, 0).
        let first: f64 = csv.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, -delta);
    }
}

#[test]
fn example_prints_a_loadable_config() {
    let dir = TempDir::new().unwrap();
    let o = run(&["example"], dir.path());
    assert_eq!(code(&o), 0);
    smallgain::specdsl::parse_system(&stdout(&o)).expect("example parses");
    assert_eq!(code(&run(&["example", "--out", "ex"], dir.path())), 0);
    assert_eq!(code(&run(&["analyze", "ex/example_three_loop.json"], dir.path())), 0);
}

#[test]
fn seed_override_changes_random_histories_only() {
    let dir = TempDir::new().unwrap();
    let cfg = config("example_three_loop.json");
    assert_eq!(code(&run(&["verify", cfg.to_str().unwrap(), "--out", "a", "--seed", "1"], dir.path())), 0);
    assert_eq!(code(&run(&["verify", cfg.to_str().unwrap(), "--out", "b", "--seed", "2"], dir.path())), 0);
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "trajectory.csv"), read("b", "trajectory.csv"));
    assert_ne!(read("a", "reports.json"), read("b", "reports.json"));
    assert_eq!(json(&dir.path().join("a/manifest.json"))["seed"], 1);
}
